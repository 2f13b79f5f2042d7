#!/usr/bin/env python3
"""Smoke test for the confbias_py extension module.

Builds nothing itself: expects `cargo build --workspace` (or --release) to
have produced libconfbias_py.so under target/. Copies the library into a
temp dir under an importable name, then exercises the bindings end to end.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def import_module():
    candidates = [
        ROOT / "target" / "release" / "libconfbias_py.so",
        ROOT / "target" / "debug" / "libconfbias_py.so",
    ]
    lib = next((p for p in candidates if p.exists()), None)
    if lib is None:
        sys.exit("libconfbias_py.so not found; run `cargo build --workspace` first")
    stage = Path(tempfile.mkdtemp(prefix="confbias_py_"))
    shutil.copy2(lib, stage / "confbias_py.so")
    sys.path.insert(0, str(stage))
    import confbias_py

    return confbias_py


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    cb = import_module()

    # Geometric schedule endpoints and ratio.
    sig = cb.make_schedule(0.79, 0.02, 6)
    assert len(sig) == 6
    approx(sig[0], 0.79)
    approx(sig[-1], 0.02)
    r = (0.02 / 0.79) ** (1 / 5)
    for i in range(1, 6):
        approx(sig[i], sig[i - 1] * r, 1e-12)

    # Dataset generation: shapes and determinism.
    data = cb.Dataset.generate(atoms=5, molecules=3, conformers=4, seed=7)
    assert data.n_molecules == 3
    assert data.n_atoms == 5
    confs = data.conformers(0)
    assert len(confs) == 4 and len(confs[0]) == 5 and len(confs[0][0]) == 3
    again = cb.Dataset.generate(atoms=5, molecules=3, conformers=4, seed=7)
    assert again.conformers(0) == confs

    # Dataset persistence round-trip.
    with tempfile.TemporaryDirectory() as d:
        p = str(Path(d) / "data.jsonl")
        data.save(p)
        back = cb.Dataset.load(p)
        assert back.conformers(2) == data.conformers(2)

    # Toy properties behave.
    rg = data.property_values(0, "rg")
    assert len(rg) == 4 and all(v > 0 for v in rg)
    mean, mn, mx = data.property_stats(0, "rg", ["mean", "min", "max"])
    assert mn <= mean <= mx
    approx(mean, sum(rg) / len(rg), 1e-12)

    # Fresh model: zero-initialized head means score is identically zero.
    model = cb.Model.init(n_atoms=5, sigma_max=0.79, sigma_min=0.02, levels=6, seed=3)
    assert model.n_atoms == 5
    approx(model.sigmas[0], 0.79)
    s = model.score(confs[0], model.sigmas[2])
    assert all(v == 0.0 for row in s for v in row)

    # A short training run should reduce the objective.
    log = model.train(data, steps=300, lr=3e-3, batch_size=16, seed=1, log_every=50)
    assert log[0][0] == 50 and log[-1][0] == 300
    assert log[-1][1] < log[0][1]
    assert all(math.isfinite(l) for _, l in log)

    # Checkpoint round-trip preserves the score field exactly.
    with tempfile.TemporaryDirectory() as d:
        p = str(Path(d) / "model.json")
        model.save(p)
        loaded = cb.Model.load(p)
        assert loaded.score(confs[0], 0.1) == model.score(confs[0], 0.1)

    # Sampling: shape, determinism, distinct chains.
    ens = model.sample(count=3, t_steps=10, seed=11)
    assert len(ens) == 3 and len(ens[0]) == 5
    assert ens == model.sample(count=3, t_steps=10, seed=11)
    assert ens[0] != ens[1]

    # Deterministic reverse from the smallest level is a pure score step.
    rev = model.reverse(confs[0], t_start=6, det_steps=1)
    assert len(rev) == 5 and all(math.isfinite(v) for row in rev for v in row)

    # Bias probe: one row per level, sane magnitudes.
    rows = model.measure_bias(data, samples_per_level=20, seed=5)
    assert len(rows) == 6
    assert [t for t, *_ in rows] == [1, 2, 3, 4, 5, 6]
    assert all(n == 20 for *_, n in rows)
    assert all(b >= 0 and math.isfinite(b) for _, _, b, _ in rows)

    # RMSD: identity and a hand value (two atoms stretched by 2 -> rmsd 1).
    approx(cb.rmsd(confs[0], confs[0]), 0.0, 1e-12)
    a = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]
    b = [[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]]
    approx(cb.rmsd(a, b), 1.0, 1e-12)

    # Kabsch returns a proper rotation.
    rot, _t = cb.kabsch(confs[0], confs[1])
    det = (
        rot[0][0] * (rot[1][1] * rot[2][2] - rot[1][2] * rot[2][1])
        - rot[0][1] * (rot[1][0] * rot[2][2] - rot[1][2] * rot[2][0])
        + rot[0][2] * (rot[1][0] * rot[2][1] - rot[1][1] * rot[2][0])
    )
    approx(det, 1.0, 1e-9)

    # Coverage and matching against the reference ensemble.
    cov, mat = cb.coverage_matching(confs, confs, delta=0.5)
    approx(cov, 1.0, 1e-12)
    approx(mat, 0.0, 1e-12)

    print("smoke test passed")


if __name__ == "__main__":
    main()
