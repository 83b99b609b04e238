"""Smoke test for the pyfieldkde extension module.

Uses an installed `pyfieldkde` if there is one, otherwise the library built by
`cargo build -p fieldkde-py --release`.
"""

import importlib.machinery
import importlib.util
import json
import math
import os
import random
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load():
    try:
        import pyfieldkde

        return pyfieldkde
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libpyfieldkde.so"
        if lib.exists():
            loader = importlib.machinery.ExtensionFileLoader("pyfieldkde", str(lib))
            spec = importlib.util.spec_from_loader("pyfieldkde", loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("pyfieldkde not found; run `cargo build -p fieldkde-py --release` first")


def main():
    fk = load()

    k = fk.kernel_value(0.0, 0.0, 4.1)
    assert math.isclose(k, 1.0 / (2.0 * math.pi * 4.1), rel_tol=1e-12)

    rng = random.Random(5)
    pts = [(rng.gauss(35, 8), rng.gauss(50, 15)) for _ in range(300)]
    pts = [(x, y) for x, y in pts if 0 <= x <= 70 and -10 <= y <= 100]
    h, candidates, scores = fk.select_bandwidth(pts, count=16)
    assert h in candidates and len(scores) == 16
    assert fk.pool_geometric_mean([1.0, 4.0]) == 2.0

    spec = fk.GridSpec.padded_pitch(2.0)
    assert (spec.rows, spec.cols) == (70, 45)
    model = fk.DensityModel(pts, h)
    grid = model.evaluate_grid(spec)
    assert abs(grid.total_mass() - 1.0) < 0.02
    again = fk.DensityGrid.from_json(grid.to_json())
    assert again.values() == grid.values()

    shifted = fk.DensityModel([(x, y + 10.0) for x, y in pts], h).evaluate_grid(spec)
    a, b = fk.Distribution.from_grid(grid), fk.Distribution.from_grid(shifted)
    exact = fk.wasserstein_exact(a, b)
    assert 8.0 < exact < 10.5, exact
    assert fk.wasserstein_exact(a, a) < 1e-9
    sk, converged, _ = fk.wasserstein_sinkhorn(a, b, epsilon=1.0)
    assert converged and sk >= exact - 1e-9

    two = fk.Distribution([(0.0, 0.0), (1.0, 0.0)], [1.0, 1.0])
    top = fk.Distribution([(0.0, 1.0), (1.0, 1.0)], [1.0, 1.0])
    assert abs(fk.wasserstein_exact(two, top) - 1.0) < 1e-12

    try:
        fk.DensityModel([], 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("empty samples accepted")

    with tempfile.TemporaryDirectory() as tmp:
        csv = os.path.join(tmp, "season.csv")
        season = json.loads((ROOT / "configs" / "season_small.json").read_text())
        n = fk.write_season(csv, config_json=json.dumps(season))
        assert n > 1000
        cfg = {
            "input": csv,
            "output_dir": os.path.join(tmp, "out"),
            "grid_spec": {"x_min": -10.0, "x_max": 80.0, "y_min": -20.0, "y_max": 120.0, "cell_size": 4.0},
        }
        report = json.loads(fk.run_analysis(json.dumps(cfg)))
        assert len(report["all_column"]) == 4
        assert min(report["all_column"], key=report["all_column"].get) == "Mix"
        grid.write_heatmap(os.path.join(tmp, "h.ppm"))
        grid.write_difference(shifted, os.path.join(tmp, "d.ppm"))
        assert Path(tmp, "d.ppm").read_bytes().startswith(b"P6\n45 70\n255\n")

    print("pyfieldkde smoke test passed")


if __name__ == "__main__":
    main()
