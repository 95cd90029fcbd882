"""Smoke test for the photostereo Python module.

Build the extension first:

    cargo build --release -p photostereo-py --features extension-module

then run `python3 python/smoke_test.py`. The script copies the built library
into a temporary directory under the importable name `photostereo.so`.
"""

import importlib
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    for profile in ("release", "debug"):
        for name in ("libphotostereo_py.so", "libphotostereo_py.dylib", "photostereo_py.dll"):
            lib = ROOT / "target" / profile / name
            if lib.exists():
                tmp = pathlib.Path(tempfile.mkdtemp())
                suffix = ".pyd" if lib.suffix == ".dll" else ".so"
                shutil.copy(lib, tmp / ("photostereo" + suffix))
                sys.path.insert(0, str(tmp))
                return importlib.import_module("photostereo")
    sys.exit("extension not built: cargo build --release -p photostereo-py --features extension-module")


def main():
    ps = load_module()
    assert set(ps.METHODS) == {"baseline", "rpca", "joint-mc", "joint-nc"}

    scene = ps.synth(images=6, width=24, height=24, shadow_free=True, seed=3)
    obs = scene.observations
    assert (obs.images, obs.height, obs.width) == (6, 24, 24)
    assert len(scene.depth) == 24 * 24
    assert len(scene.lights) == 6

    for method in ("baseline", "rpca"):
        rec = ps.solve(obs, method)
        err = scene.z_err(rec.depth)
        print(f"{method:9s} z_err {err:.2e}")
        assert err < 0.5, err
        assert rec.outer_iterations is None

    config = ps.default_config().replace("outer_max = 15000", "outer_max = 3000")
    rec = ps.solve(obs, "joint-mc", config)
    err = scene.z_err(rec.depth)
    print(f"joint-mc  z_err {err:.2e}, {rec.outer_iterations} outer iterations")
    assert err < 5.0, err
    assert len(rec.normals) == 3 and len(rec.lights) == 6

    # Observations built from plain rasters behave like the synthetic ones.
    raw = ps.Observations(scene.images, obs.mask, obs.height, obs.width)
    assert raw.pixels == obs.pixels
    rec = ps.solve(raw, "baseline")
    assert scene.z_err([0.0 if math.isnan(v) else v for v in rec.depth]) < 0.5

    assert ps.relative_improvement([1.0, 1.0], [2.0, 4.0]) == 62.5
    assert ps.percent_improved_trials([1.0, 3.0], [2.0, 2.0]) == 50.0
    assert ps.shrink([[3.0, 0.0], [0.0, 1.0]], 2.0) == [[1.0, 0.0], [0.0, 0.0]]
    assert abs(ps.tnn([[1.0, 0, 0, 0], [0, 2.0, 0, 0], [0, 0, 3.0, 0], [0, 0, 0, 0.5]]) - 0.5) < 1e-12

    try:
        ps.solve(obs, "joint")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown method accepted")
    print("ok")


if __name__ == "__main__":
    main()
