import contextlib
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import plain_mean_focal_loss  # noqa: E402
from salsign.dataset import Dataset, DeclaredCounts, ImageRecord, SignAnnotation, SignCategory  # noqa: E402
from salsign.geometry import Box  # noqa: E402
from salsign.losses import FocalParams, LossMode, SalienceParams  # noqa: E402
from salsign.matching import Detection  # noqa: E402
from salsign.synth.model import TrainConfig, TrainingSet, loss_and_grad  # noqa: E402

# --- acceptance reporting ---------------------------------------------------

_ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@contextlib.contextmanager
def acceptance(number: int, title: str):
    """Record a PASS/FAIL line for one acceptance criterion (re-raises failures)."""
    key = f"{number}"
    try:
        yield
    except BaseException as exc:
        _ACCEPTANCE[key] = (False, f"{title} -- {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        raise
    prev = _ACCEPTANCE.get(key)
    if prev is None or prev[0]:
        _ACCEPTANCE[key] = (True, title)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=int):
        ok, text = _ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {text}")


# --- fixture builders ---------------------------------------------------------

def ann(ann_id, image_id, box, salient, category=SignCategory.WARNING):
    return SignAnnotation(ann_id, image_id, Box(*box), category, salient)


def det(image_id, box, score):
    return Detection(image_id, Box(*box), score)


def two_image_fixture():
    """Image A: salient GT hit at IoU 0.6. Image B: non-salient GT, detection at IoU 0.3."""
    ds = Dataset(images=(
        ImageRecord("img-a", 20, 20, (ann("a-1", "img-a", (0, 0, 10, 10), True),)),
        ImageRecord("img-b", 20, 20, (ann("b-1", "img-b", (0, 0, 10, 10), False, SignCategory.GUIDE),)),
    ))
    dets = [det("img-a", (0, 0, 10, 6), 0.9), det("img-b", (0, 0, 10, 3), 0.8)]
    return ds, dets


def reference_count_fixture():
    """31,992 annotations of which 20,377 salient, spread over 1,000 images."""
    total, salient = 31_992, 20_377
    images = []
    k = 0
    n_images = 1000
    per = [total // n_images + (1 if i < total % n_images else 0) for i in range(n_images)]
    cats = list(SignCategory)
    for i, n in enumerate(per):
        iid = f"ref-{i:04d}"
        anns = []
        for j in range(n):
            x = (j % 20) * 30.0
            y = (j // 20) * 30.0
            anns.append(SignAnnotation(f"{iid}-{j:02d}", iid, Box(x, y, x + 20, y + 20),
                                       cats[k % len(cats)], k < salient))
            k += 1
        images.append(ImageRecord(iid, 1920, 1080, tuple(anns)))
    return Dataset(tuple(images), DeclaredCounts(total, salient, total - salient))


@pytest.fixture
def fixture_2img():
    return two_image_fixture()


def random_eval_set(rng, n_images=5):
    """Random grouped (detections, annotations) with at least one salient GT overall."""
    dets, gts = {}, {}
    k = 0
    for i in range(n_images):
        iid = f"img-{i}"
        anns = []
        for _ in range(int(rng.integers(1, 6))):
            x, y = rng.uniform(0, 80, 2)
            w, h = rng.uniform(5, 20, 2)
            anns.append(ann(f"{iid}-{k:03d}", iid, (x, y, x + w, y + h), bool(rng.random() < 0.5)))
            k += 1
        gts[iid] = anns
        ds = []
        for _ in range(int(rng.integers(0, 12))):
            if anns and rng.random() < 0.6:
                g = anns[int(rng.integers(0, len(anns)))].box
                jit = rng.normal(0, 2, 4)
                x0, y0 = g.x_min + jit[0], g.y_min + jit[1]
                box = (x0, y0, max(g.x_max + jit[2], x0 + 1), max(g.y_max + jit[3], y0 + 1))
            else:
                x, y = rng.uniform(0, 80, 2)
                box = (x, y, x + 10, y + 10)
            ds.append(det(iid, box, float(rng.random())))
        dets[iid] = ds
    first = gts["img-0"][0]
    gts["img-0"][0] = SignAnnotation(first.id, first.image_id, first.box, first.category, True)
    return dets, gts


def random_dataset(rng, max_images=6):
    """Random valid dataset exercising every optional field."""
    images, k = [], 0
    cats = list(SignCategory)
    for i in range(int(rng.integers(0, max_images + 1))):
        iid = f"im{i}-{int(rng.integers(0, 10**6))}"
        w, h = int(rng.integers(20, 2000)), int(rng.integers(20, 2000))
        anns = []
        for _ in range(int(rng.integers(0, 5))):
            x0, x1 = sorted(rng.uniform(0, w, 2))
            y0, y1 = sorted(rng.uniform(0, h, 2))
            if x1 - x0 < 1e-6 or y1 - y0 < 1e-6:
                continue
            occ = [None, True, False][int(rng.integers(0, 3))]
            anns.append(SignAnnotation(f"a{k}", iid, Box(float(x0), float(y0), float(x1), float(y1)),
                                       cats[int(rng.integers(0, len(cats)))], bool(rng.integers(0, 2)), occ))
            k += 1
        clip = None if rng.random() < 0.5 else f"clip-{int(rng.integers(0, 100))}"
        images.append(ImageRecord(iid, w, h, tuple(anns), clip))
    ds = Dataset(tuple(images))
    if rng.random() < 0.5:
        n = sum(len(im.annotations) for im in images)
        s = sum(a.salient for im in images for a in im.annotations)
        ds = Dataset(ds.images, DeclaredCounts(n, s, n - s))
    return ds


def random_training_instance(rng, n=30, dim=6):
    """Small random TrainingSet, TrainConfig and parameter vector for gradient checks."""
    x = rng.normal(0, 1, (n, dim))
    positive = rng.random(n) < 0.3
    salience = rng.choice([1.0, 4.0], n)
    ts = TrainingSet(x.T, positive, salience)
    fp = FocalParams(alpha_fl=float(rng.choice([0.25, 1.0])), gamma=float(rng.choice([0.0, 1.0, 2.0, 5.0])))
    tc = TrainConfig(loss_mode=str(rng.choice(["FL", "SSFL"])), focal=fp, salience=SalienceParams(4.0))
    theta = rng.normal(0, 1, dim + 1)
    return x, ts, tc, theta


def composed_gradient_error(rng):
    """max |analytic - central FD| / max |FD| for one random instance."""
    x, ts, tc, theta = random_training_instance(rng)
    weights = ts.salience if tc.loss_mode is LossMode.SSFL else [1.0] * len(x)
    _, grad = loss_and_grad(theta, ts, tc)
    h = 1e-6
    fd = []
    for i in range(len(theta)):
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        f_up = plain_mean_focal_loss(up, x, ts.positive, weights, tc.focal.alpha_fl, tc.focal.gamma)
        f_dn = plain_mean_focal_loss(down, x, ts.positive, weights, tc.focal.alpha_fl, tc.focal.gamma)
        fd.append((f_up - f_dn) / (2 * h))
    fd = np.array(fd)
    return float(np.max(np.abs(grad - fd)) / np.max(np.abs(fd)))


SMALL_CONFIG = """\
seed: 2
gen: {n_scenes: 12}
train: {epochs: 12}
experiment: {n_train: 10, n_test: 5}
"""


def run_cli_pipeline(root, cli_main):
    """Run every subcommand once under ``root``; return {relative path: bytes} plus captured stdout."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "run.yaml"
    cfg.write_text(SMALL_CONFIG)
    out = root / "out"
    steps = [
        ["gen-synth"],
        ["validate", str(out / "gen" / "dataset.json")],
        ["train", "--dataset", str(out / "gen" / "dataset.json"), "--features", str(out / "gen" / "features.bin")],
        ["detect", "--dataset", str(out / "gen" / "dataset.json"), "--features", str(out / "gen" / "features.bin"),
         "--weights", str(out / "train" / "weights.json")],
        ["eval", "--dataset", str(out / "gen" / "dataset.json"), "--detections", str(out / "detect" / "detections.json")],
        ["experiment"],
    ]
    names = ["gen", "validate", "train", "detect", "eval", "experiment"]
    codes = []
    for name, step in zip(names, steps):
        codes.append(cli_main(["--config", str(cfg), "--quiet", "--out", str(out / name)] + step))
    files = {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
    return codes, files


def random_match_instance(rng, max_dets=6, max_gts=6):
    """One image's (detections, annotations) on a small integer canvas.

    Scores come from a coarse set and about half the detections are shifted
    copies of annotation boxes, so score ties, IoU ties and contested
    annotations are all common.
    """
    def rbox():
        x, y = rng.integers(0, 6, 2)
        return (float(x), float(y), float(x + rng.integers(1, 5)), float(y + rng.integers(1, 5)))

    ids = [f"g{k}" for k in rng.permutation(max_gts)[: rng.integers(0, max_gts + 1)]]
    gts = [ann(i, "img", rbox(), bool(rng.integers(0, 2))) for i in ids]
    dets = []
    for _ in range(int(rng.integers(0, max_dets + 1))):
        if gts and rng.random() < 0.5:
            g = gts[int(rng.integers(0, len(gts)))].box
            dx, dy = (float(v) for v in rng.integers(-1, 2, 2))
            box = (g.x_min + dx, g.y_min + dy, g.x_max + dx, g.y_max + dy)
        else:
            box = rbox()
        dets.append(det("img", box, float(rng.choice([0.2, 0.5, 0.8, rng.random()]))))
    return dets, gts
