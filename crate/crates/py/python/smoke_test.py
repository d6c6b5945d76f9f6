"""Small end-to-end run through the Python bindings.

Build first, e.g. `maturin develop -m crates/py/Cargo.toml --features extension-module`,
or copy target/release/libsparsetouch_py.so next to this file as sparsetouch_py.so.
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import sparsetouch_py as st


def main():
    data = st.Dataset.simulate(sensors=(12, 8), forces=(10, 6), magnitudes=[10.0, 30.0], terms=30)
    assert (data.n_sensors, data.n_trials) == (96, 120), data

    # reciprocity of the plate model
    a = st.deflection(40.0, 30.0, 5.0, 150.0, 80.0)
    b = st.deflection(150.0, 80.0, 5.0, 40.0, 30.0)
    assert math.isclose(a, b, rel_tol=1e-9), (a, b)

    cand = st.filter_candidates(data)
    assert 0 < len(cand) < data.n_sensors

    sel = st.select(data, cand, "pca-qr", budget=6)
    assert sel.method == "pca-qr" and sel.max_budget == 6
    assert len(sel.at_budget(3)) == 3 and len(set(sel.at_budget(6))) == 6

    loc = st.Locator.train(data, sel.at_budget(6), magnitude_head=True)
    err = loc.test_error(data)
    diag = math.hypot(200.0, 120.0)
    print(f"pca-qr k=6: mean test error {err:.2f} mm ({100 * err / diag:.1f}% of diagonal)")

    readings = data.readings()
    j = 0
    u, v, m = loc.locate([readings[i][j] for i in loc.sensors])
    assert m is not None and all(map(math.isfinite, (u, v, m)))

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "data.json")
        data.save(path)
        assert st.Dataset.load(path).content_hash() == data.content_hash()

    try:
        st.select(data, cand, "bogus")
    except ValueError as e:
        assert "greedy-svr" in str(e)
    else:
        raise AssertionError("bad method accepted")

    print("smoke test ok")


if __name__ == "__main__":
    main()
