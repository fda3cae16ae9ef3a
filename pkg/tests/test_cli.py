import csv
import io
import json

import numpy as np
import pytest

from wzkey.bounds import gs_bin_boundary
from wzkey.cli import (
    EXIT_DIGEST,
    EXIT_DOMAIN,
    EXIT_INFEASIBLE,
    main,
    read_bits,
    write_bits,
)
from wzkey.gf2core import to_hex
from wzkey.keyagree import HelperBundle
from wzkey.nested_design import DesignResult
from wzkey.polar import PolarCodePair, quantize

SMALL_DESIGN = ["--n", "64", "--key-bits", "8", "--pa", "0.02", "--pb", "1e-3", "--c-design-p", "0.2",
                "--pb-trials", "4000", "--weight-trials", "300", "--distortion-trials", "300",
                "--construction-trials", "200", "--probe-trials", "200", "--quantile", "0.99"]


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return list(csv.reader(io.StringIO("\n".join(l for l in text.splitlines() if not l.startswith("#")))))


def test_bit_file_round_trip(tmp_path):
    for n in (0, 1, 7, 8, 9, 1024):
        b = np.random.default_rng(n).integers(0, 2, n, dtype=np.uint8)
        write_bits(tmp_path / "b.bin", b)
        raw = (tmp_path / "b.bin").read_bytes()
        assert int.from_bytes(raw[:8], "little") == n and len(raw) == 8 + (n + 7) // 8
        assert np.array_equal(read_bits(tmp_path / "b.bin"), b)


def test_bit_file_header_mismatch(tmp_path, capsys):
    (tmp_path / "bad.bin").write_bytes((100).to_bytes(8, "little") + b"\0")
    (tmp_path / "h.json").write_text("{}")
    code, _, err = run(["audit", "--preset", "hamming74", "--code-out", str(tmp_path / "h.json")], capsys)
    code, _, err = run(["enroll", "--code", str(tmp_path / "h.json"), "--x", str(tmp_path / "bad.bin"),
                        "--out", str(tmp_path / "o.bin")], capsys)
    assert code == 1 and "header" in err


def test_region_endpoints(capsys):
    code, out, _ = run(["region", "--pa", "0.15"], capsys)
    assert code == 0
    assert out.startswith("# wzkey ")
    r = rows(out)
    assert r[0] == ["q", "R_s", "R_l", "R_w"] and len(r) == 502
    for row, q in ((r[1], 0.0), (r[-1], 0.5)):
        rt = gs_bin_boundary(q, 0.15)
        assert [float(v) for v in row[1:]] == pytest.approx(list(rt.as_tuple()), abs=1e-6)


def test_fig5_families(capsys):
    code, out, _ = run(["fig5"], capsys)
    fams = {r[0] for r in rows(out)[1:]}
    assert {"boundary", "sw_line", "optimum", "fcs_cofe", "rm_concat", "prior_polar", "nested_polar"} <= fams


def test_bounds_table(capsys):
    code, out, _ = run(["bounds"], capsys)
    r = rows(out)
    assert [x[0] for x in r[1:]] == ["1024", "2048"]
    assert float(r[1][4]) == pytest.approx(0.273, abs=0.01)
    assert float(r[2][5]) == pytest.approx(0.437, abs=0.012)


def test_seed_env_override(capsys, monkeypatch):
    _, a, _ = run(["region", "--points", "2", "--seed", "5"], capsys)
    monkeypatch.setenv("WZKEY_SEED", "9")
    _, b, _ = run(["region", "--points", "2", "--seed", "5"], capsys)
    assert '"seed": 5' in a and '"seed": 9' in b and '"seed_source": "env"' in b


def test_domain_error_exit(capsys):
    code, _, err = run(["region", "--pa", "0.7"], capsys)
    assert code == EXIT_DOMAIN and "domain" in err


def test_audit_examples(capsys, tmp_path):
    code, out, _ = run(["audit", "--preset", "hamming74", "--mode", "CS"], capsys)
    rep = json.loads(out)
    assert rep["report"]["I_Sp_Wp"] == pytest.approx(0.0, abs=1e-12)
    assert rep["tool_version"] and rep["config"]["seed"] == 0
    code, out, _ = run(["audit", "--n", "8", "--m1", "3", "--m2", "0"], capsys)
    assert json.loads(out)["report"]["I_S_W"] == pytest.approx(0.0, abs=1e-12)


def test_linear_enroll_reconstruct(tmp_path, capsys):
    h = tmp_path / "h.json"
    run(["audit", "--n", "12", "--m1", "4", "--m2", "3", "--seed", "2", "--code-out", str(h)], capsys)
    x = np.random.default_rng(0).integers(0, 2, 12, dtype=np.uint8)
    write_bits(tmp_path / "x.bin", x)
    code, key1, _ = run(["enroll", "--code", str(h), "--x", str(tmp_path / "x.bin"), "--out",
                         str(tmp_path / "w.bin"), "--key-out", str(tmp_path / "k.bin")], capsys)
    assert code == 0
    code, key2, _ = run(["reconstruct", "--code", str(h), "--y", str(tmp_path / "x.bin"), "--bundle",
                         str(tmp_path / "w.bin")], capsys)
    # a noiseless measurement succeeds whenever the quantization error is a coset leader
    from wzkey.wz_linear import NestedLinearCode, vq_nearest
    c = NestedLinearCode.from_json(h.read_text())
    if c.is_leader(vq_nearest(x, c)[1]):
        assert key1 == key2
    assert key1.strip() == to_hex(read_bits(tmp_path / "k.bin"))
    HelperBundle.from_bytes((tmp_path / "w.bin").read_bytes())


@pytest.fixture(scope="module")
def design_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("design")
    assert main(["design", *SMALL_DESIGN, "--out", str(d / "r.json"), "--code-out", str(d / "c.json")]) == 0
    return d


def test_design_byte_identical(design_file, tmp_path):
    assert main(["design", *SMALL_DESIGN, "--out", str(tmp_path / "r2.json")]) == 0
    assert (design_file / "r.json").read_bytes() == (tmp_path / "r2.json").read_bytes()
    d = json.loads((design_file / "r.json").read_text())
    assert d["config"]["n"] == 64 and d["tool_version"]
    res = DesignResult.from_dict(d)
    assert PolarCodePair.from_json((design_file / "c.json").read_text()).to_json() == res.code.to_json()


def test_design_infeasible(capsys):
    args = [a if a != "0.02" else "0.3" for a in SMALL_DESIGN]
    code, _, err = run(["design", *args], capsys)
    assert code == EXIT_INFEASIBLE and "infeasible" in err


def test_polar_enroll_reconstruct(design_file, tmp_path, capsys):
    r = str(design_file / "r.json")
    res = DesignResult.from_json((design_file / "r.json").read_text())
    x = np.random.default_rng(1).integers(0, 2, 64, dtype=np.uint8)
    write_bits(tmp_path / "x.bin", x)
    _, xq, _ = quantize(x, res.code, q_design=res.Eq)
    write_bits(tmp_path / "xq.bin", xq)
    code, k1, _ = run(["enroll", "--code", r, "--x", str(tmp_path / "x.bin"), "--out", str(tmp_path / "w.bin")],
                      capsys)
    assert code == 0
    code, k2, _ = run(["reconstruct", "--code", r, "--y", str(tmp_path / "xq.bin"), "--bundle",
                       str(tmp_path / "w.bin")], capsys)
    assert code == 0 and k1 == k2
    # chosen secret
    sp = np.array([1, 0, 1, 1, 0, 0, 1, 0], dtype=np.uint8)
    write_bits(tmp_path / "sp.bin", sp)
    code, k3, _ = run(["enroll", "--code", r, "--x", str(tmp_path / "x.bin"), "--chosen-key",
                       str(tmp_path / "sp.bin"), "--out", str(tmp_path / "wc.bin")], capsys)
    code, k4, _ = run(["reconstruct", "--code", r, "--y", str(tmp_path / "xq.bin"), "--bundle",
                       str(tmp_path / "wc.bin")], capsys)
    assert k3.strip() == k4.strip() == to_hex(sp)


def test_digest_mismatch_exit(design_file, tmp_path, capsys):
    r = str(design_file / "r.json")
    write_bits(tmp_path / "x.bin", np.zeros(64, dtype=np.uint8))
    run(["enroll", "--code", r, "--x", str(tmp_path / "x.bin"), "--out", str(tmp_path / "w.bin")], capsys)
    b = HelperBundle.from_bytes((tmp_path / "w.bin").read_bytes())
    (tmp_path / "w2.bin").write_bytes(HelperBundle(b.scheme, b.n, b.W, bytes(32)).to_bytes())
    code, _, err = run(["reconstruct", "--code", r, "--y", str(tmp_path / "x.bin"), "--bundle",
                        str(tmp_path / "w2.bin")], capsys)
    assert code == EXIT_DIGEST


def test_simulate_fig3(design_file, tmp_path, capsys):
    c = str(design_file / "c.json")
    argv = ["simulate", "--code", c, "--mode", "fig3", "--grid", "0.1:0.2:0.05", "--trials", "300",
            "--workers", "1", "--records", str(tmp_path / "rec.csv")]
    code, out, _ = run(argv, capsys)
    assert code == 0
    r = rows(out)
    assert r[0] == ["p", "trials", "errors", "rate", "ci95_low", "ci95_high"] and len(r) == 4
    for row in r[1:]:
        assert int(row[1]) == 300 and float(row[4]) <= float(row[3]) <= float(row[5])
    rec = rows((tmp_path / "rec.csv").read_text())
    assert len(rec) == 1 + 900
    assert sum(int(x[2]) for x in rec[1:] if x[0] == "0.2") == int(r[3][2])
    # parallel workers give the same numbers
    _, out2, _ = run(argv[:-4] + ["--workers", "2"], capsys)
    assert rows(out2) == r


def test_simulate_fig4(design_file, capsys):
    r = str(design_file / "r.json")
    code, out, _ = run(["simulate", "--code", r, "--mode", "fig4", "--grid", "20,40,64", "--trials", "200"],
                       capsys)
    assert code == 0
    d = [float(x[3]) for x in rows(out)[1:]]
    assert d[-1] == 0.0 and d[0] >= d[1] >= d[2]


def test_simulate_zero_trials(design_file, capsys):
    code, out, _ = run(["simulate", "--code", str(design_file / "c.json"), "--trials", "0"], capsys)
    assert code == 0
    assert rows(out) == [["p", "trials", "errors", "rate", "ci95_low", "ci95_high"]]
