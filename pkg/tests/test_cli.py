import json

import pytest

from layres.cli import ConfigError, main, parse_config, run

MINIMAL = """
[run]
mode = eigenvalues
n_max = 5

[coupling]
alpha = 0.0
beta = 0.4
"""

DISK_SURFACE = """
[surface]
family = disk
center = 1.0 0.0 1.0
normal = 0.0 0.0 1.0
radius = 0.5
"""


class TestParseConfig:
    def test_minimal_defaults(self):
        cfg = parse_config(MINIMAL)
        assert cfg.mode == "eigenvalues"
        assert cfg.l == 2 and cfg.order == 16
        assert cfg.format == "csv"
        assert cfg.tail_tol == 1e-12 and cfg.root_tol == 1e-12
        # defaults are materialized and echoed
        assert cfg.resolved["order"] == 16
        assert cfg.resolved["n_cut"] == "auto"

    def test_unknown_key_names_line(self):
        text = "[coupling]\nbetta = 0.4\n"
        with pytest.raises(ConfigError, match=r"line 2.*betta"):
            parse_config(text)

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match=r"line 1.*unknown section"):
            parse_config("[couplings]\nbeta = 0.4\n")

    def test_key_outside_section(self):
        with pytest.raises(ConfigError, match="outside"):
            parse_config("beta = 0.4\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config("[coupling]\nbeta = 0.4\nbeta = 0.5\n[run]\nmode = validate\n")

    def test_beta_zero_rejected(self):
        with pytest.raises(ConfigError, match="beta"):
            parse_config("[run]\nmode = validate\n[coupling]\nbeta = 0.0\n")

    def test_beta_required(self):
        with pytest.raises(ConfigError, match="beta"):
            parse_config("[run]\nmode = validate\n")

    def test_mode_required_and_checked(self):
        with pytest.raises(ConfigError, match="mode"):
            parse_config("[coupling]\nbeta = 0.4\n")
        with pytest.raises(ConfigError, match="mode"):
            parse_config("[run]\nmode = resonate\n[coupling]\nbeta = 0.4\n")

    def test_bad_vector(self):
        text = MINIMAL + "[surface]\nfamily = disk\ncenter = 1.0 0.0\n"
        with pytest.raises(ConfigError, match="three components"):
            parse_config(text)

    def test_family_specific_keys_enforced(self):
        text = MINIMAL + (
            "[surface]\nfamily = spherical_cap\ncenter = 1 0 1\n"
            "radius = 0.5\npolar_angle = 0.8\nnormal = 0 0 1\n")
        with pytest.raises(ConfigError, match="does not apply"):
            parse_config(text)

    def test_pole_needs_surface(self):
        text = "[run]\nmode = pole\n[coupling]\nbeta = 0.4\n"
        with pytest.raises(ConfigError, match="surface"):
            parse_config(text)

    def test_unsorted_deltas_rejected(self):
        text = ("[run]\nmode = sweep\n[coupling]\nbeta = 0.4\n"
                + DISK_SURFACE.strip() + "\ndeltas = 0.1 0.05\n")
        with pytest.raises(ConfigError, match="increasing"):
            parse_config(text)

    def test_comments_and_blank_lines(self):
        text = "# header\n\n[run]\nmode = validate  # trailing\n[coupling]\nbeta = 0.4\n"
        assert parse_config(text).mode == "validate"


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


class TestEigenvaluesMode:
    def test_csv_output(self, tmp_path):
        out = tmp_path / "eig.csv"
        cfg = parse_config(MINIMAL + f"[output]\npath = {out}\n")
        assert run(cfg) == 0
        lines = out.read_text(encoding="utf-8").splitlines()
        meta = [ln for ln in lines if ln.startswith("#")]
        assert lines[0].startswith("# layres ")
        assert any("config order = 16" in ln for ln in meta)
        body = [ln for ln in lines if not ln.startswith("#")]
        assert body[0] == "n,eps_n,class,window"
        rows = [ln.split(",") for ln in body[1:]]
        assert len(rows) == 5
        assert rows[0][2] == "discrete"
        assert float(rows[0][1]) == pytest.approx(-0.26095, abs=1e-4)
        assert rows[1][2] == "embedded" and rows[1][3] == "1"
        assert [r[3] for r in rows[1:]] == ["1", "2", "3", "4"]

    def test_byte_identical_reruns(self, tmp_path):
        out = tmp_path / "a.csv"
        cfg = parse_config(MINIMAL + f"[output]\npath = {out}\n")
        assert run(cfg) == 0
        first = out.read_bytes()
        assert run(cfg) == 0
        assert out.read_bytes() == first
        assert b"\r" not in first

    def test_json_output(self, tmp_path):
        out = tmp_path / "eig.json"
        cfg = parse_config(MINIMAL + f"[output]\npath = {out}\nformat = json\n")
        assert run(cfg) == 0
        payload = json.loads(out.read_text(encoding="utf-8"))
        assert payload["columns"][0] == "n"
        assert len(payload["rows"]) == 5


class TestValidateMode:
    def test_all_pass_exit_zero(self, tmp_path, capsys):
        out = tmp_path / "val.csv"
        cfg = parse_config(
            "[run]\nmode = validate\n[coupling]\nbeta = 0.4\n"
            f"[output]\npath = {out}\n")
        assert run(cfg) == 0
        printed = capsys.readouterr().out
        assert "FAIL" not in printed and "PASS" in printed
        body = [ln for ln in out.read_text().splitlines() if not ln.startswith("#")]
        assert all(ln.endswith(",pass") for ln in body[1:])


class TestPoleMode:
    def test_pole_run(self, tmp_path):
        out = tmp_path / "pole.csv"
        text = ("[run]\nmode = pole\nl = 2\n[coupling]\nbeta = 0.4\n"
                + DISK_SURFACE.strip() + "\ndelta = 0.08\n"
                "[numerics]\norder = 6\n"
                f"[output]\npath = {out}\n")
        cfg = parse_config(text)
        assert run(cfg) == 0
        lines = out.read_text().splitlines()
        assert any(ln.startswith("# n_max = ") for ln in lines)
        assert any(ln.startswith("# tail_constant = ") for ln in lines)
        body = [ln for ln in lines if not ln.startswith("#")]
        header = body[0].split(",")
        row = dict(zip(header, body[1].split(",")))
        assert float(row["im_z"]) < 0.0
        assert 1.0 < float(row["re_z"]) < 4.0
        assert float(row["residual"]) < 1e-12


class TestSweepMode:
    def test_sweep_with_plot_script(self, tmp_path):
        out = tmp_path / "sweep.csv"
        text = ("[run]\nmode = sweep\nl = 2\n[coupling]\nbeta = 0.4\n"
                + DISK_SURFACE.strip() + "\ndeltas = 0.02 0.035 0.06 0.1\n"
                "[numerics]\norder = 6\n"
                f"[output]\npath = {out}\nemit_plot_script = true\n")
        cfg = parse_config(text)
        assert run(cfg) == 0
        lines = out.read_text().splitlines()
        body = [ln for ln in lines if not ln.startswith("#")]
        assert body[0] == ("delta,re_z,im_z,re_mu,im_mu,im_mu_closed_form,"
                           "residual,iterations,status")
        assert len(body) == 5
        assert all(ln.endswith(",ok") for ln in body[1:])
        fit = {ln.split(" = ")[0][2:]: float(ln.split(" = ")[1])
               for ln in lines if ln.startswith("# fit_")}
        assert 3.8 < fit["fit_im_exponent"] < 4.2
        assert 1.9 < fit["fit_re_exponent"] < 2.1
        script = (tmp_path / "sweep.csv.gp").read_text()
        # columns referenced by header name; plotter never invoked
        assert "column('im_mu')" in script and "im_mu_closed_form" in script
        assert str(out) in script


class TestMain:
    def test_missing_config_file(self, capsys):
        assert main(["validate", "--config", "/nonexistent.cfg"]) == 2
        assert "config error" in capsys.readouterr().err

    def test_config_error_exit_two(self, tmp_path, capsys):
        path = _write(tmp_path, "bad.cfg", "[coupling]\nbetta = 0.4\n")
        assert main(["validate", "--config", path]) == 2
        assert "betta" in capsys.readouterr().err

    def test_output_and_order_overrides(self, tmp_path):
        path = _write(tmp_path, "eig.cfg", MINIMAL)
        out = tmp_path / "cli.csv"
        assert main(["eigenvalues", "--config", path,
                     "--output", str(out), "--quad-order", "8"]) == 0
        text = out.read_text()
        assert "# config order = 8" in text
        assert "# config path = " + str(out) in text

    def test_mode_argument_overrides_config(self, tmp_path, capsys):
        path = _write(tmp_path, "eig.cfg", MINIMAL)
        out = tmp_path / "val.csv"
        assert main(["validate", "--config", path, "--output", str(out)]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_pole_mode_without_surface_rejected(self, tmp_path, capsys):
        path = _write(tmp_path, "eig.cfg", MINIMAL)
        assert main(["pole", "--config", path]) == 2
        assert "surface" in capsys.readouterr().err

    def test_threads_flag(self, tmp_path):
        path = _write(tmp_path, "eig.cfg", MINIMAL)
        out = tmp_path / "t.csv"
        assert main(["eigenvalues", "--config", path, "--output", str(out),
                     "--threads", "1"]) == 0
