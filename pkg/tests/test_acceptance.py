"""End-to-end acceptance suite.

One test per criterion; each prints a PASS line once its assertions hold
(run with `pytest tests/test_acceptance.py -s` to see them). The heavier
pipeline runs are shared through module-scoped fixtures.
"""

import csv
import hashlib
import time
from pathlib import Path

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from wsimil.attention import backward, forward, init_params
from wsimil.bags import join_streams
from wsimil.cli import main
from wsimil.estimators import MILBagClassifier
from wsimil.frequency import dft2d, dwt_haar, fft1d, idwt_haar
from wsimil.imaging import (
    RasterImage,
    RoiMask,
    Semantics,
    blank_ratio,
    extract_patches,
    rgb_to_ycbcr,
    ycbcr_to_rgb,
)
from wsimil.loss import AslConfig, asl, sigmoid
from wsimil.metrics import (
    average_precision,
    evaluate,
    roc_auc,
    roc_auc_trapezoid,
)
from wsimil.synth import bags_by_split, make_dataset
from oracles import naive_dft1, naive_dft2, pairwise_auc_oracle, rank_walk_ap_oracle

HEADS = ("mil", "gmil", "mrl")


def report(n, label):
    print(f"\n[acceptance] criterion {n} ({label}): PASS")


def sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def test_criterion_01_transform_oracles():
    start = time.monotonic()
    rng = np.random.default_rng(101)
    for _ in range(50):
        m, n = rng.integers(1, 17, size=2)
        grid = rng.standard_normal((int(m), int(n)))
        got = dft2d(grid).values
        want = naive_dft2(grid)
        scale = max(np.max(np.abs(want)), 1e-30)
        assert np.max(np.abs(got - want)) / scale <= 1e-9
    for length in range(1, 65):
        x = rng.standard_normal(length) + 1j * rng.standard_normal(length)
        want = naive_dft1(x)
        scale = max(np.max(np.abs(want)), 1e-30)
        assert np.max(np.abs(fft1d(x) - want)) / scale <= 1e-9
    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"transform oracles took {elapsed:.1f}s"
    report(1, "transform oracles")


def test_criterion_02_wavelet_exactness():
    rng = np.random.default_rng(102)
    for _ in range(100):
        h, w = 2 * rng.integers(1, 33, size=2)
        grid = rng.standard_normal((int(h), int(w)))
        sub = dwt_haar(grid)
        assert np.max(np.abs(idwt_haar(sub) - grid)) <= 1e-12
        e_in = np.sum(grid * grid)
        e_out = sum(np.sum(getattr(sub, s) ** 2) for s in ("ll", "lh", "hl", "hh"))
        assert abs(e_in - e_out) / e_in <= 1e-12
    c = 1.7
    sub = dwt_haar(np.full((16, 16), c))
    assert np.array_equal(sub.ll, np.full((8, 8), 2 * c))
    assert not sub.lh.any() and not sub.hl.any() and not sub.hh.any()
    report(2, "wavelet exactness")


def test_criterion_03_color_space():
    values = np.arange(0, 256, 8, dtype=np.float64)  # 32^3 = 32768 lattice pixels
    r, g, b = np.meshgrid(values, values, values, indexing="ij")
    pixels = np.stack([r.ravel(), g.ravel(), b.ravel()])
    assert pixels.shape[1] >= 10_000
    img = RasterImage(pixels[:, None, :], Semantics.RGB8)
    back = ycbcr_to_rgb(rgb_to_ycbcr(img))
    assert np.max(np.abs(back.data - img.data)) <= 1e-9
    grays = np.arange(256, dtype=np.float64)
    gray_img = RasterImage(np.stack([grays[None, :]] * 3), Semantics.RGB8)
    out = rgb_to_ycbcr(gray_img)
    assert np.array_equal(out.data[1], np.zeros_like(out.data[1]))
    assert np.array_equal(out.data[2], np.zeros_like(out.data[2]))
    report(3, "color space")


def _fd_gradients(head, bag, params, dlogits, eps=1e-5):
    out = {}
    for name in params.names():
        theta = getattr(params, name)
        fd = np.zeros_like(theta)
        it = np.nditer(theta, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = theta[idx]
            theta[idx] = orig + eps
            lp, _, _ = forward(head, bag, params)
            theta[idx] = orig - eps
            lm, _, _ = forward(head, bag, params)
            theta[idx] = orig
            fd[idx] = float(np.dot(dlogits, lp - lm)) / (2 * eps)
        out[name] = fd
    return out


def test_criterion_04_gradient_correctness():
    start = time.monotonic()
    for head in HEADS:
        for seed in range(100):
            rng = np.random.default_rng(10_000 + seed)
            n = int(rng.integers(1, 8))
            d = int(rng.integers(2, 17))
            hidden = int(rng.integers(1, 9))
            params = init_params(hidden, d, 6, seed=seed)
            bag = rng.standard_normal((n, d))
            dlogits = rng.standard_normal(6)
            _, _, cache = forward(head, bag, params)
            grads = backward(cache, params, dlogits)
            fd = _fd_gradients(head, bag, params, dlogits)
            for name, fd_tensor in fd.items():
                got = getattr(grads, name)
                both_zero = (np.abs(got) < 1e-8) & (np.abs(fd_tensor) < 1e-8)
                denom = np.maximum(np.abs(got), np.abs(fd_tensor))
                rel = np.where(
                    both_zero, 0.0,
                    np.abs(got - fd_tensor) / np.where(denom == 0, 1.0, denom),
                )
                assert np.max(rel) <= 1e-4, f"{head}/{name} seed {seed}"
    # loss gradient against central differences of the scalar loss
    rng = np.random.default_rng(20_000)
    checked = 0
    cases = 0
    for _ in range(140):
        if cases >= 100:
            break
        z = rng.standard_normal(6) * 3
        y = rng.integers(0, 2, 6)
        cfg = AslConfig(float(rng.integers(0, 3)), float(rng.integers(0, 3)) + 2.0,
                        float(rng.random() * 0.15))
        if np.any(np.abs(sigmoid(z) - cfg.margin) <= 1e-3):
            continue
        cases += 1
        _, grad = asl(z, y, cfg)
        for k in range(6):
            # per-label FD: the loss is separable, so this isolates dL/dz_k
            zk, yk = z[k : k + 1], y[k : k + 1]
            fd = (asl(zk + 1e-6, yk, cfg)[0] - asl(zk - 1e-6, yk, cfg)[0]) / 2e-6
            if abs(fd - grad[k]) <= 1e-10:
                continue  # below the resolution of the FD oracle
            assert abs(fd - grad[k]) / max(abs(fd), abs(grad[k])) <= 1e-4
            checked += 1
    assert cases >= 100 and checked > 150
    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"gradient checks took {elapsed:.1f}s"
    report(4, "gradient correctness")


def test_criterion_05_aggregator_invariants():
    rng = np.random.default_rng(105)
    instances_seen = 0
    for seed in range(90):
        n = int(rng.integers(1, 31))
        d = int(rng.integers(4, 17))
        hidden = int(rng.integers(2, 17))
        params = init_params(hidden, d, 6, seed=seed)
        bag = rng.standard_normal((n, d))
        perm = rng.permutation(n)
        for head in HEADS:
            logits, attn, _ = forward(head, bag, params)
            plogits, pattn, _ = forward(head, bag[perm], params)
            assert np.max(np.abs(plogits - logits)) <= 1e-12
            assert np.max(np.abs(pattn - attn[perm])) <= 1e-12
        for train in (False, True):
            _, _, cache = forward("mrl", bag, params, train_mode=train,
                                  dropout_rate=0.25, seed=seed)
            e = cache.extras["e"]
            assert np.all((e >= 0.0) & (e < 1.0))
            if train:
                instances_seen += n
        for head in ("mil", "gmil"):
            _, attn, _ = forward(head, bag, params)
            assert abs(attn.sum() - 1.0) <= 1e-12
    assert instances_seen >= 1000
    report(5, "aggregator invariants")


def test_criterion_06_loss_reductions():
    rng = np.random.default_rng(106)
    cfg0 = AslConfig(0.0, 0.0, 0.0)
    for _ in range(200):
        z = rng.standard_normal(6) * 4
        y = rng.integers(0, 2, 6)
        loss, grad = asl(z, y, cfg0)
        bce = sum(
            np.logaddexp(0.0, -zk) if yk else np.logaddexp(0.0, zk)
            for zk, yk in zip(z, y)
        )
        assert abs(loss - bce) <= 1e-12
        p = sigmoid(z)
        assert np.max(np.abs(grad - (p - y))) <= 1e-12
    loss, grad = asl(np.array([-10.0]), np.array([0]), AslConfig(0.0, 1.0, 0.08))
    assert loss == 0.0 and grad[0] == 0.0
    report(6, "loss reductions")


def test_criterion_07_metric_oracles():
    rng = np.random.default_rng(107)
    done = 0
    while done < 1000:
        n = int(rng.integers(2, 25))
        scores = np.round(rng.random(n), 1)  # heavy ties
        labels = rng.integers(0, 2, n)
        if labels.sum() in (0, n):
            continue
        mw = roc_auc(scores, labels)
        assert abs(mw - pairwise_auc_oracle(scores, labels)) <= 1e-12
        assert abs(mw - roc_auc_trapezoid(scores, labels)) <= 1e-12
        assert abs(average_precision(scores, labels)
                   - rank_walk_ap_oracle(scores, labels)) <= 1e-12
        done += 1
    assert abs(roc_auc([0.9, 0.6, 0.4, 0.2], [1, 0, 1, 0]) - 0.75) <= 1e-15
    report(7, "metric oracles")


def write_train_config(path, out_dir, data_dir, head, seed=0, epochs=25):
    path.write_text(
        "\n".join([
            "[data]",
            f"manifest = {data_dir / 'manifest.csv'}",
            f"bags_dir = {data_dir / 'bags'}",
            "domains = rgb",
            "normalize = false",
            "",
            "[model]",
            f"head = {head}",
            "",
            "[train]",
            f"epochs = {epochs}",
            f"seed = {seed}",
            "",
            "[output]",
            f"dir = {out_dir}",
        ]) + "\n"
    )


def run_pipeline(base: Path, data_dir: Path, head: str, tag: str):
    run_dir = base / f"run_{tag}"
    cfg = base / f"{tag}.cfg"
    write_train_config(cfg, run_dir, data_dir, head)
    assert main(["train", "--config", str(cfg)]) == 0
    eval_dir = base / f"eval_{tag}"
    assert main([
        "eval", "--checkpoint", str(run_dir / "checkpoint.mrlp"),
        "--manifest", str(data_dir / "manifest.csv"),
        "--bags-dir", str(data_dir / "bags"),
        "--split", "test", "--domains", "rgb", "--out-dir", str(eval_dir),
    ]) == 0
    return run_dir, eval_dir


def read_macro(eval_dir: Path):
    with open(eval_dir / "report.csv") as fh:
        rows = {r[0]: r for r in csv.reader(fh)}
    macro = rows["macro"]
    return {"map": float(macro[1]), "auc": float(macro[2])}


def best_val_map(run_dir: Path) -> float:
    text = (run_dir / "run_meta.txt").read_text()
    for line in text.splitlines():
        if line.startswith("best_val_map"):
            return float(line.split("=")[1])
    raise AssertionError("no best_val_map recorded")


@pytest.fixture(scope="module")
def synth7(tmp_path_factory):
    base = tmp_path_factory.mktemp("accept")
    data_dir = base / "synth7"
    assert main(["synth", "--seed", "7", "--n-wsis", "300", "--d", "32",
                 "--difficulty", "3", "--out-dir", str(data_dir)]) == 0
    return base, data_dir


@pytest.fixture(scope="module")
def mrl_run(synth7):
    base, data_dir = synth7
    return run_pipeline(base, data_dir, "mrl", "mrl")


def test_criterion_08_end_to_end_learning(synth7, mrl_run):
    start = time.monotonic()
    base, data_dir = synth7

    # sanity oracle before any training: a linear probe on instance means
    # must already separate every factor
    records = make_dataset(seed=7, n_wsis=300, dim=32, difficulty=3.0)
    splits = bags_by_split(records)
    x = {s: np.stack([b.instances.mean(axis=0) for b in v])
         for s, v in splits.items()}
    y = {s: np.stack([b.labels.as_array() for b in v])
         for s, v in splits.items()}
    for k in range(6):
        probe = LogisticRegression(max_iter=1000).fit(x["train"], y["train"][:, k])
        probe_auc = roc_auc(probe.predict_proba(x["test"])[:, 1], y["test"][:, k])
        assert probe_auc >= 0.95, f"probe factor {k}: {probe_auc:.3f}"

    run_dir, eval_dir = mrl_run
    assert best_val_map(run_dir) >= 0.95
    assert read_macro(eval_dir)["auc"] >= 0.90

    for head in ("mil", "gmil"):
        _, head_eval = run_pipeline(base, data_dir, head, head)
        assert read_macro(head_eval)["auc"] >= 0.85, head

    control_dir = base / "synth0"
    assert main(["synth", "--seed", "7", "--n-wsis", "300", "--d", "32",
                 "--difficulty", "0", "--out-dir", str(control_dir)]) == 0
    _, control_eval = run_pipeline(base, control_dir, "mrl", "control")
    control_auc = read_macro(control_eval)["auc"]
    assert 0.40 <= control_auc <= 0.60, control_auc

    elapsed = time.monotonic() - start
    assert elapsed < 300.0, f"end-to-end run took {elapsed:.1f}s"
    report(8, "end-to-end synthetic learning")


def test_criterion_09_joint_stream_effect():
    records = make_dataset(seed=11, n_wsis=300, dim=32, difficulty=3.0,
                           split_domains=True)

    def split(domain):
        out = {"train": [], "val": [], "test": []}
        for rec in records:
            if domain == "union":
                bag = join_streams([rec.bags["rgb"], rec.bags["dft"]], "bag-union")
            else:
                bag = rec.bags[domain]
            out[rec.split].append(bag)
        return out

    aucs = {}
    for mode in ("union", "rgb", "dft"):
        bags = split(mode)
        model = MILBagClassifier(head="mrl", normalize=False).fit(
            bags["train"], val_bags=bags["val"]
        )
        aucs[mode] = evaluate(model, bags["test"]).macro["auc"]
    best_single = max(aucs["rgb"], aucs["dft"])
    assert aucs["union"] >= best_single + 0.05, aucs
    report(9, "joint-stream effect")


def test_criterion_10_determinism(synth7, mrl_run):
    base, data_dir = synth7
    first_run, first_eval = mrl_run
    second_run, second_eval = run_pipeline(base, data_dir, "mrl", "mrl_repeat")
    assert sha(first_run / "checkpoint.mrlp") == sha(second_run / "checkpoint.mrlp")
    assert sha(first_run / "run_meta.txt") == sha(second_run / "run_meta.txt")
    for name in ("report.csv", "report.txt"):
        assert sha(first_eval / name) == sha(second_eval / name)
    report(10, "determinism")


def test_criterion_11_patch_extraction_fixtures():
    def tissue(w, h):
        return RasterImage(np.full((3, h, w), 150.0), Semantics.RGB8)

    one = extract_patches(tissue(640, 640), RoiMask(np.ones((640, 640), bool)))
    assert len(one) == 1 and one[0].origin == (0, 0)

    two = extract_patches(tissue(960, 640), RoiMask(np.ones((640, 960), bool)),
                          stride=320)
    assert [p.origin for p in two] == [(0, 0), (320, 0)]

    small = np.zeros((640, 640), bool)
    small[:500, :500] = True
    assert extract_patches(tissue(640, 640), RoiMask(small)) == []

    # blank filter provably enforced on emitted patches
    rng = np.random.default_rng(111)
    data = rng.uniform(0, 255, (3, 256, 256))
    img = RasterImage(data, Semantics.RGB8)
    mask = RoiMask(rng.random((256, 256)) < 0.8)
    for patch in extract_patches(img, mask, patch_size=64, stride=32,
                                 max_blank=0.3):
        assert blank_ratio(patch) <= 0.3
    report(11, "patch extraction fixtures")
