"""Smoke test for the semilab_py extension.

Build first with `cargo build -p semilab-py` (or `--release`), then run
`python3 python/smoke_test.py`. The script loads the freshly built shared
library directly, so no install step is needed.
"""

import importlib.util
import math
import pathlib
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_extension():
    for profile in ("release", "debug"):
        for name in ("libsemilab_py.so", "libsemilab_py.dylib", "semilab_py.dll"):
            path = ROOT / "target" / profile / name
            if path.exists():
                spec = importlib.util.spec_from_file_location("semilab_py", path)
                module = importlib.util.module_from_spec(spec)
                spec.loader.exec_module(module)
                return module
    sys.exit("semilab_py not built; run `cargo build -p semilab-py` first")


def main():
    sl = load_extension()

    # Linear oracle: u'' = u on [0, 1], u = 1 at both ends.
    grid = sl.Grid.cube(1, 129, 0.0, 1.0)
    mask = sl.DomainMask(grid)
    op = sl.Operator(mask)
    u, report = sl.solve(op, sl.Phi.linear(1.0), 1.0)
    assert report["converged"], report
    h = 1.0 / 128
    err = max(
        abs(u.values()[i] - math.cosh(grid.coords(i)[0] - 0.5) / math.cosh(0.5))
        for i in mask.interior_indices()
    )
    assert err <= 5 * h * h, err

    # phi = 0 reproduces the harmonic extension.
    g2 = sl.Grid.cube(2, 17, -1.0, 1.0)
    disc = sl.DomainMask(g2, "0.9 - r^2")
    op2 = sl.Operator(disc, a=[1.0, 0.0, 0.0, "1 + 0.5*x1^2"])
    f = sl.Field(disc, "1 + x1")
    u0, _ = sl.solve(op2, sl.Phi.zero(), f)
    assert u0.max_abs_diff(op2.harmonic_extension(f)) < 1e-10

    # Sublinear absorption keeps the solution between 0 and the harmonic extension.
    us, _ = sl.solve(op2, sl.Phi.power("1 + r", 0.5), f)
    assert 0.0 <= us.interior_min() and us.interior_max() <= u0.interior_max() + 1e-12

    # Green potential of a nonnegative source is nonnegative.
    assert op2.green_apply(sl.Field(disc, 1.0)).interior_min() >= 0.0

    # Hypotheses and the majorant.
    rep = sl.Phi.power(1.0, 2.0).check(disc, 1.0)
    assert rep["h4"]["passed"] is False and rep["sh1"]["passed"] is False
    phi1, mrep = sl.Phi.power("1 + x1^2", 0.5).majorant(disc, "1 + x1^2")
    assert mrep["domination_margin"] >= -1e-12 and mrep["value_at_zero"] == 0.0
    assert phi1([0.0, 0.0], 0.0) == 0.0

    # Expressions and errors.
    assert sl.eval_expr("(1+r)^(-3)", [1.0]) == 0.125
    assert sl.normalize_expr("min(x1, 1-x1)")
    try:
        sl.normalize_expr("2*^3")
    except sl.SemilabError as e:
        assert "column 3" in str(e), e
    else:
        raise AssertionError("malformed expression accepted")

    # The command runner.
    with tempfile.TemporaryDirectory() as out:
        code = sl.run_command("checks", str(ROOT / "configs" / "checks_convex.toml"), out)
        assert code == 2, code
        assert (pathlib.Path(out) / "manifest.json").exists()

    print("semilab_py smoke test passed")


if __name__ == "__main__":
    main()
