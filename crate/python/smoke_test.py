"""Quick check of the Python bindings on a small oscillatory problem."""

import json
import math
import sys
import tempfile
from pathlib import Path

import lod_ocp


def main():
    cfg = json.dumps({"example": "oscillatory", "N": 4, "R": 4, "mode": "localized", "k": 2})
    pipe = lod_ocp.Pipeline(cfg)
    assert pipe.n_fine == 15 * 15 and pipe.n_coarse == 9 and pipe.k == 2

    fine = pipe.solve_fine()
    ms = pipe.solve_multiscale()
    coarse = pipe.solve_coarse()
    e_ms, l_ms = pipe.errors(fine, ms)
    e_c, _ = pipe.errors(fine, coarse)
    print(f"fine {fine!r}")
    print(f"multiscale relative errors: energy {e_ms:.3e}, L2 {l_ms:.3e}; coarse energy {e_c:.3e}")
    assert fine.kkt_residual < 1e-8
    assert e_ms < e_c < 1.0

    other = pipe.solve_multiscale(y_d=2.0)
    assert math.isclose(other.energy_norm, 2.0 * ms.energy_norm, rel_tol=1e-8)

    d = pipe.diagnostics()
    assert 1.0 <= d["kappa"] < 50.0 and 0.0 < d["q"] < 1.0
    print(f"kappa {d['kappa']:.3f}, q {d['q']:.3f}")

    with tempfile.TemporaryDirectory() as out:
        manifest = json.loads(lod_ocp.run("decay", out, cfg))
        assert (Path(out) / "decay.csv").exists()
        assert set(manifest["checksums"]) == {"decay.csv"}

    try:
        lod_ocp.Pipeline('{"no_such_key": 1}')
    except ValueError:
        pass
    else:
        raise AssertionError("unknown key accepted")

    assert "desk-oscillatory" in lod_ocp.presets()
    assert lod_ocp.choose_k(1 / 16, 3) == 9
    print("ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
