"""Acceptance suite: one test per acceptance criterion.

Each test prints one `[PASS]`/`[FAIL]` line (run with `pytest -s` to see
them as they happen).  The heavy end-to-end artifacts (synthetic
dataset, two 50-epoch trained models, galleries and reports for the
cnn/hog/lbp extractors) are built once in a module fixture.
"""

import time

import numpy as np
import pytest

from patchface.config import Config
from patchface.dataset import load_manifest
from patchface.evaluate import enroll, evaluate, make_extractor
from patchface.gallery_io import deserialize_gallery, serialize_gallery
from patchface.nn import (
    activation_signature,
    deserialize_params,
    gradient_check,
    init_params,
    network_backward,
    network_forward,
    numerical_gradient,
    relative_error,
    serialize_params,
)
from patchface.nn.layers import (
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    maxpool2x2_backward,
    maxpool2x2_forward,
    relu_backward,
    relu_forward,
    sigmoid_backward,
    sigmoid_forward,
)
from patchface.pipeline import detect_keypoints, sample_to_patches
from patchface.sparse import lasso_solve, soft_threshold
from patchface.synthetic import SyntheticSpec, generate_synthetic
from patchface.triplet import (
    PatchDataset,
    TrainConfig,
    build_pool,
    evaluate_triplets,
    train,
    triplet_loss,
    triplet_loss_gradients,
    triplet_terms,
)

SEED = 42
MARGIN = 0.2


def report(name: str, ok: bool, detail: str = "") -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


# ------------------------------------------------------------------ fixture

@pytest.fixture(scope="module")
def run(tmp_path_factory):
    """Seed-42 synthetic dataset, 50-epoch models, galleries, reports."""
    root = tmp_path_factory.mktemp("acceptance")
    data = root / "data"
    spec = SyntheticSpec(identities=10, samples_per_identity=20,
                         gallery_per_identity=14, seed=SEED)
    generate_synthetic(spec, data)
    manifest = load_manifest(data)
    config = Config(seed=SEED)

    # Patch datasets per modality and split (training uses the gallery
    # split; probes stay held out).
    kc = config.keypoint_config()
    patches = {"gallery": {"image": ([], []), "depth": ([], [])},
               "probe": {"image": ([], []), "depth": ([], [])}}
    for entry in manifest.entries:
        from patchface.dataset import load_sample

        sample = load_sample(manifest, entry)
        img_p, dep_p = sample_to_patches(
            sample, kc, max_invalid_fraction=config.max_invalid_fraction)
        store = patches[entry.split]
        for modality, plist in (("image", img_p), ("depth", dep_p)):
            for p in plist:
                store[modality][0].append(p.data)
                store[modality][1].append(entry.person)
    datasets = {
        split: {m: PatchDataset(np.stack(d), lab)
                for m, (d, lab) in per_mod.items()}
        for split, per_mod in patches.items()
    }

    # Train one model per modality (depth offsets the seed as the CLI
    # does), tracking held-out probe triplet loss after each epoch.
    models = {}
    probe_losses = {}
    train_seconds = {}
    seeds = {"image": SEED, "depth": SEED + 1}
    for modality in ("image", "depth"):
        ds = datasets["gallery"][modality]
        probe_ds = datasets["probe"][modality]
        probe_pool = build_pool(probe_ds, 500, np.random.default_rng(123))
        losses = []

        def track(epoch, params, stats, probe_ds=probe_ds,
                  probe_pool=probe_pool, losses=losses):
            mean_loss, _ = evaluate_triplets(params, probe_ds,
                                             probe_pool.triplets, MARGIN)
            losses.append(mean_loss)

        tc = config.train_config(seed=seeds[modality])
        tc.pool_size = config.pool_size_per_person * len(ds.persons)
        t0 = time.perf_counter()
        params, history = train(ds, tc, on_epoch_end=track)
        train_seconds[modality] = time.perf_counter() - t0
        models[modality] = params
        probe_losses[modality] = losses

    # Enroll + evaluate the probe split for each extractor, all through
    # the same SRC configuration and code path.
    extractors = {
        "cnn": make_extractor("cnn", models["image"], models["depth"]),
        "hog": make_extractor("hog"),
        "lbp": make_extractor("lbp"),
    }
    galleries = {}
    reports = {}
    for name, extractor in extractors.items():
        galleries[name] = enroll(manifest, extractor, config)
        reports[name] = evaluate(manifest, galleries[name], extractor, config)

    return {
        "data": data, "manifest": manifest, "config": config,
        "datasets": datasets, "models": models,
        "probe_losses": probe_losses, "train_seconds": train_seconds,
        "extractors": extractors, "galleries": galleries,
        "reports": reports,
    }


# -------------------------------------------------- criterion 1: shapes

def test_shape_conformance():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    params = init_params(rng)
    x = rng.normal(size=(2, 1, 20, 20)).astype(np.float32)
    _, trace = network_forward(x, params, training=True, return_trace=True)
    want = ((6, 18, 18), (6, 18, 18), (6, 18, 18), (6, 9, 9),
            (32, 7, 7), (32, 7, 7), (32, 3, 3), (288,), (128,))
    elapsed = time.perf_counter() - t0
    report("shape conformance", trace.shapes == want and elapsed < 1.0,
           f"{trace.shapes}, {elapsed:.2f}s")


# --------------------------------------------- criterion 2: gradients

def _composite_loss(margin):
    def loss_fn(params, x, with_grads=True):
        emb, trace = network_forward(x, params, training=True,
                                     return_trace=True)
        terms, valid = triplet_terms(emb[0], emb[1], emb[2], margin)
        ok = bool(valid[0])
        loss = float(terms[0]) if ok else 0.0
        sig = activation_signature(trace) + bytes([ok])
        grads = None
        if with_grads:
            g = np.stack(
                triplet_loss_gradients(emb[0], emb[1], emb[2], margin)
            ).astype(emb.dtype)
            if not ok:
                g[:] = 0.0
            grads = network_backward(trace, g, params)
        return loss, grads, sig
    return loss_fn


def _layer_fd_errors(rng):
    """Max relative FD error over every layer on one random instance."""
    errors = []
    # conv
    x = rng.normal(size=(2, 5, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    g = rng.normal(size=(3, 3, 4))
    gx, gw, gb = conv2d_backward(x, w, g)
    nx, nw, nb = numerical_gradient(
        lambda: float(np.sum(conv2d_forward(x, w, b) * g)), [x, w, b])
    errors += [relative_error(gx, nx), relative_error(gw, nw),
               relative_error(gb, nb)]
    # batch norm (training statistics)
    xb = rng.normal(size=(4, 3, 4, 4))
    scale = rng.normal(size=3)
    shift = rng.normal(size=3)
    gb4 = rng.normal(size=xb.shape)
    _, cache, _, _ = batchnorm_forward(xb, scale, shift, np.zeros(3),
                                       np.ones(3), 1e-5, training=True)
    gxb, gsc, gsh = batchnorm_backward(cache, gb4)

    def bn_loss():
        y, _, _, _ = batchnorm_forward(xb, scale, shift, np.zeros(3),
                                       np.ones(3), 1e-5, training=True)
        return float(np.sum(y * gb4))

    nxb, nsc, nsh = numerical_gradient(bn_loss, [xb, scale, shift])
    errors += [relative_error(gxb, nxb), relative_error(gsc, nsc),
               relative_error(gsh, nsh)]
    # sigmoid
    xs = rng.normal(size=(2, 3, 3))
    gs = rng.normal(size=xs.shape)
    errors.append(relative_error(
        sigmoid_backward(sigmoid_forward(xs), gs),
        numerical_gradient(lambda: float(np.sum(sigmoid_forward(xs) * gs)),
                           [xs])[0]))
    # relu (entries nudged off the kink)
    xr = rng.normal(size=(2, 4, 4))
    xr[np.abs(xr) < 0.05] = 0.1
    gr = rng.normal(size=xr.shape)
    errors.append(relative_error(
        relu_backward(xr, gr),
        numerical_gradient(lambda: float(np.sum(relu_forward(xr) * gr)),
                           [xr])[0]))
    # max pool
    xm = rng.normal(size=(2, 6, 6))
    gm = rng.normal(size=(2, 3, 3))
    _, am = maxpool2x2_forward(xm)
    errors.append(relative_error(
        maxpool2x2_backward(xm.shape, am, gm),
        numerical_gradient(
            lambda: float(np.sum(maxpool2x2_forward(xm)[0] * gm)), [xm])[0]))
    return max(errors)


def test_gradient_correctness():
    t0 = time.perf_counter()
    worst_layer = 0.0
    worst_net = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        worst_layer = max(worst_layer, _layer_fd_errors(rng))
        params = init_params(rng)
        x = rng.normal(size=(3, 1, 20, 20)).astype(np.float32)
        worst_net = max(worst_net, gradient_check(
            params, x, _composite_loss(MARGIN), step=1e-3,
            samples_per_tensor=6, seed=seed))
    elapsed = time.perf_counter() - t0
    report("gradient correctness",
           worst_layer <= 1e-4 and worst_net <= 1e-4 and elapsed < 30.0,
           f"layers {worst_layer:.2e}, composite {worst_net:.2e}, "
           f"{elapsed:.1f}s over 20 instances")


# ------------------------------------------------- criterion 3: LASSO

def test_lasso_optimality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_kkt = 0.0
    monotone = True
    for _ in range(100):
        m = int(rng.integers(16, 129))
        n = int(rng.integers(8, 201))
        d = rng.normal(size=(m, n))
        d /= np.linalg.norm(d, axis=0)
        y = rng.normal(size=m)
        for lam in (0.01, 0.1, 0.5):
            code = lasso_solve(d, y, lam, tol=1e-10, max_iter=100000,
                               record_objective=True)
            corr = d.T @ (y - d @ code.x)
            for j in range(n):
                if code.x[j] == 0.0:
                    worst_kkt = max(worst_kkt, abs(corr[j]) - lam)
                else:
                    worst_kkt = max(worst_kkt,
                                    abs(corr[j] - lam * np.sign(code.x[j])))
            obs = code.objectives
            monotone &= all(b <= a + 1e-12 * max(1.0, abs(a))
                            for a, b in zip(obs, obs[1:]))
    # 1-D closed form: x = sign(y) max(|y| - lam, 0)
    one_d = lasso_solve(np.array([[1.0]]), np.array([0.9]), 0.3)
    closed_form = abs(one_d.x[0] - soft_threshold(0.9, 0.3)) < 1e-12
    elapsed = time.perf_counter() - t0
    report("lasso optimality",
           worst_kkt <= 1e-6 and monotone and closed_form and elapsed < 30.0,
           f"KKT {worst_kkt:.2e}, monotone {monotone}, 1-D {closed_form}, "
           f"{elapsed:.1f}s over 300 solves")


# ---------------------------------------- criterion 4: triplet semantics

def test_triplet_loss_semantics():
    t0 = time.perf_counter()
    f = np.linspace(-1, 1, 128)
    loss_eq, valid_eq = triplet_loss(f, f, f, MARGIN)
    degenerate_ok = valid_eq and abs(loss_eq - MARGIN) < 1e-12

    rng = np.random.default_rng(7)
    f_a = rng.normal(size=128)
    f_n = f_a + 10.0
    term, valid = triplet_loss(f_a, f_a, f_n, MARGIN)
    g_a, g_p, g_n = triplet_loss_gradients(f_a, f_a, f_n, MARGIN)
    invalid_ok = (not valid) and not (g_a.any() or g_p.any() or g_n.any())

    fa, fp, fn = rng.normal(size=(3, 50, 128))
    terms, mask = triplet_terms(fa, fp, fn, MARGIN)
    batch = float(terms[mask].sum())
    oracle = sum(t for i in range(50)
                 for t, ok in [triplet_loss(fa[i], fp[i], fn[i], MARGIN)]
                 if ok)
    batch_ok = abs(batch - oracle) < 1e-9
    elapsed = time.perf_counter() - t0
    report("triplet loss semantics",
           degenerate_ok and invalid_ok and batch_ok and elapsed < 1.0,
           f"margin {degenerate_ok}, invalid-zero {invalid_ok}, "
           f"batch-oracle {batch_ok}, {elapsed:.2f}s")


# --------------------------------- criterion 5: end-to-end identification

def test_end_to_end_synthetic(run):
    budget_ok = run["train_seconds"]["image"] + run["train_seconds"]["depth"] <= 300.0

    drops = {}
    for modality in ("image", "depth"):
        losses = run["probe_losses"][modality]
        drops[modality] = 1.0 - losses[-1] / losses[0]
    drop_ok = all(d >= 0.5 for d in drops.values())

    fused = run["reports"]["cnn"].accuracy("fused")
    rank1_ok = fused >= 0.90

    intra_inter = {}
    for modality in ("image", "depth"):
        probe_ds = run["datasets"]["probe"][modality]
        emb = network_forward(probe_ds.patches[:, np.newaxis],
                              run["models"][modality])
        labels = np.array(probe_ds.labels)
        idx = np.random.default_rng(0).choice(
            len(emb), size=min(800, len(emb)), replace=False)
        e, lab = emb[idx], labels[idx]
        dist = np.linalg.norm(e[:, np.newaxis] - e[np.newaxis, :], axis=-1)
        same = lab[:, np.newaxis] == lab[np.newaxis, :]
        iu = np.triu_indices(len(e), 1)
        intra_inter[modality] = (float(dist[iu][same[iu]].mean()),
                                 float(dist[iu][~same[iu]].mean()))
    sep_ok = all(intra < inter for intra, inter in intra_inter.values())

    detail = (f"train {run['train_seconds']['image']:.0f}+"
              f"{run['train_seconds']['depth']:.0f}s, "
              f"probe-loss drop img {100*drops['image']:.0f}% "
              f"dep {100*drops['depth']:.0f}%, fused rank-1 {100*fused:.1f}%, "
              f"intra/inter img {intra_inter['image'][0]:.2f}/"
              f"{intra_inter['image'][1]:.2f} "
              f"dep {intra_inter['depth'][0]:.2f}/{intra_inter['depth'][1]:.2f}")
    report("end-to-end synthetic identification",
           budget_ok and drop_ok and rank1_ok and sep_ok, detail)


# ------------------------- criterion 6: learned vs hand-crafted ordering

def test_learned_vs_handcrafted_ordering(run):
    acc = {name: run["reports"][name].accuracy("fused")
           for name in ("cnn", "hog", "lbp")}
    ok = acc["cnn"] >= acc["hog"] and acc["cnn"] >= acc["lbp"]
    report("learned >= hand-crafted (fused rank-1)", ok,
           ", ".join(f"{k} {100*v:.1f}%" for k, v in acc.items()))


# -------------------------- criterion 7: determinism and persistence

def test_determinism_and_persistence(run):
    # Bit-identical retraining under identical seeds (short run crossing
    # one pool refresh).
    ds = run["datasets"]["gallery"]["image"]
    tc = TrainConfig(epochs=12, batch_size=64, pool_refresh=10,
                     pool_size=160, seed=SEED)
    p1, _ = train(ds, tc)
    p2, _ = train(ds, tc)
    retrain_ok = serialize_params(p1) == serialize_params(p2)

    # Model and gallery files round-trip bit-exactly.
    blob = serialize_params(run["models"]["image"])
    model_ok = serialize_params(deserialize_params(blob)) == blob
    gblob = serialize_gallery(run["galleries"]["cnn"])
    gallery_ok = serialize_gallery(deserialize_gallery(gblob)) == gblob

    # Reports reproduce byte-for-byte.
    again = evaluate(run["manifest"], run["galleries"]["cnn"],
                     run["extractors"]["cnn"], run["config"])
    report_ok = again.to_csv_lines() == run["reports"]["cnn"].to_csv_lines()

    report("determinism and persistence",
           retrain_ok and model_ok and gallery_ok and report_ok,
           f"retrain {retrain_ok}, model {model_ok}, gallery {gallery_ok}, "
           f"report {report_ok}")


# ------------------------------------ criterion 8: pipeline geometry

def test_pipeline_geometry(run):
    from patchface.dataset import load_sample

    kc = run["config"].keypoint_config()
    all_ok = True
    checked = 0
    for entry in run["manifest"].entries[:20]:
        sample = load_sample(run["manifest"], entry)
        img_p, dep_p = sample_to_patches(sample, kc)
        all_ok &= len(img_p) == len(dep_p)
        for ip, dp in zip(img_p, dep_p):
            all_ok &= ip.data.shape == (20, 20) and dp.data.shape == (20, 20)
            all_ok &= ip.keypoint == dp.keypoint
            checked += 1
    constant = np.full((96, 96), 128, dtype=np.uint8)
    no_kps = detect_keypoints(constant, kc) == []
    report("pipeline geometry", all_ok and no_kps,
           f"{checked} pairs checked, constant-image keypoints: "
           f"{0 if no_kps else 'nonzero'}")
