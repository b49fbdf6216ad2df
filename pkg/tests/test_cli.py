"""End-to-end command-line tests run in process through main()."""

import json
import math
import re

import numpy as np
import pytest

from exspec import EmitterParams, Spectrum, fluorescence_spectrum
from exspec.cli import main
from exspec.dataio import read_spectrum_csv
from exspec.synth import AcquisitionConfig, simulate_counts

GAMMA = 35.0
GAMMA0 = 8.0

CONFIG_TEMPLATE = """
[emitter]
nu21_mhz = 3.0
gamma_mhz = 35.0
gamma0_mhz = 8.0
alpha = 0.25

[coupling]
c_mhz = {c_mhz}
psi_rad = 1.5707963267948966
i_e_cps = 2.5e5

[acquisition]
dwell_s = 0.01
averages = 20
laser_rms = 0.003
seed = {seed}

[grid]
start_mhz = -347.0
stop_mhz = 353.0
points = 200
"""

# Elliptical tip plus a 2:1 emitter dipole 20 degrees off the tip axis.
TIP_ELL_DEG = math.degrees(0.2860568199950614)
MOL_ELL_DEG = math.degrees(math.atan(1.0 / math.sqrt(2.0)))

POLAR_TEMPLATE = """
[emitter]
nu21_mhz = 3.0
gamma_mhz = 35.0
gamma0_mhz = 8.0
alpha = 0.25

[coupling]
c_mhz = 1.0
psi_rad = 1.5707963267948966
i_e_cps = 2.5e5

[acquisition]
dwell_s = 0.01
averages = 20
laser_rms = 0.003
seed = 3

[grid]
start_mhz = -347.0
stop_mhz = 353.0
points = 201

[polarization]
tip_axis_deg = 0.0
tip_ellipticity_deg = {tip_ell:.17g}
mol_axis_deg = 20.0
mol_ellipticity_deg = {mol_ell:.17g}
theta_start_deg = 0
theta_stop_deg = 174
theta_count = 30
"""


def write_config(tmp_path, name="run.ini", c_mhz="0.6", seed=7):
    path = tmp_path / name
    path.write_text(CONFIG_TEMPLATE.format(c_mhz=c_mhz, seed=seed))
    return str(path)


def run_simulate(tmp_path, outdir, **kwargs):
    config = write_config(tmp_path, **kwargs)
    out = tmp_path / outdir
    code = main(["simulate", "--config", config, "--out", str(out)])
    assert code == 0
    return out


def test_simulate_outputs_and_determinism(tmp_path, capsys):
    out1 = run_simulate(tmp_path, "run1")
    assert (out1 / "model.csv").exists()
    assert (out1 / "simulated.csv").exists()
    assert (out1 / "manifest.json").exists()
    assert "wrote" in capsys.readouterr().out

    # same seed: byte-identical spectra
    out2 = run_simulate(tmp_path, "run2")
    for name in ("model.csv", "simulated.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    # different seed changes the counts but not the model
    config = write_config(tmp_path)
    out3 = tmp_path / "run3"
    assert main(["simulate", "--config", config, "--out", str(out3), "--seed", "99"]) == 0

    def data_rows(path):
        return [l for l in path.read_text().splitlines() if not l.startswith("#")]

    assert data_rows(out1 / "model.csv") == data_rows(out3 / "model.csv")
    assert data_rows(out1 / "simulated.csv") != data_rows(out3 / "simulated.csv")
    parsed = read_spectrum_csv(str(out3 / "simulated.csv"))
    assert parsed.metadata["seed"] == "99"
    assert parsed.metadata["command"] == "simulate"

    with open(out1 / "manifest.json") as handle:
        manifest = json.load(handle)
    assert manifest["command"] == "simulate"
    assert manifest["seed"] == 7
    assert manifest["parameters"]["grid"]["points"] == 200
    assert manifest["parameters"]["emitter"]["gamma"] == GAMMA
    assert len(manifest["outputs"]) == 2


def test_outdir_environment_fallback(tmp_path, monkeypatch):
    config = write_config(tmp_path)
    target = tmp_path / "from_env"
    monkeypatch.setenv("EXSPEC_OUTDIR", str(target))
    monkeypatch.chdir(tmp_path)
    assert main(["simulate", "--config", config]) == 0
    assert (target / "simulated.csv").exists()


def test_fit_recovers_simulated_coupling(tmp_path, capsys):
    out = run_simulate(tmp_path, "fit_run", seed=11)
    capsys.readouterr()
    code = main(
        [
            "fit",
            str(out / "simulated.csv"),
            "--gamma-mhz",
            "35",
            "--gamma0-mhz",
            "8",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    stdout = capsys.readouterr().out
    assert "model: transmission" in stdout
    assert "fit_result.json" in stdout

    with open(out / "fit_result.json") as handle:
        record = json.load(handle)
    assert set(record) == {
        "model",
        "params",
        "free",
        "stderr",
        "residual_rms",
        "iterations",
        "converged",
        "flags",
        "message",
    }
    assert record["converged"] is True
    params = record["params"]
    assert params["c_amp"] == pytest.approx(0.6, rel=0.10)
    assert params["psi"] == pytest.approx(math.pi / 2, abs=0.05)
    assert params["nu21"] == pytest.approx(3.0, abs=1.0)
    assert params["i_e"] == pytest.approx(2.5e5, rel=0.01)
    assert params["gamma"] == GAMMA
    for name in record["free"]:
        assert record["stderr"][name] > 0.0


def test_fit_on_noiseless_model_is_tight(tmp_path):
    out = run_simulate(tmp_path, "clean_run")
    code = main(
        [
            "fit",
            str(out / "model.csv"),
            "--gamma-mhz",
            "35",
            "--gamma0-mhz",
            "8",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    with open(out / "fit_result.json") as handle:
        record = json.load(handle)
    assert record["params"]["c_amp"] == pytest.approx(0.6, rel=1e-6)
    assert record["params"]["psi"] == pytest.approx(math.pi / 2, abs=1e-6)


def test_fit_exit_codes(tmp_path, capsys):
    out = run_simulate(tmp_path, "codes_run", seed=6)
    csv = str(out / "simulated.csv")

    # missing required linewidth
    assert main(["fit", csv, "--out", str(out)]) == 2
    assert "invalid input" in capsys.readouterr().err

    # joint fit has the same requirement
    assert main(["fit", csv, "--joint", "--out", str(out)]) == 2

    # unreadable inputs
    assert main(["fit", str(tmp_path / "nope.csv"), "--gamma-mhz", "35"]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("frequency,counts\n1,2\n")
    assert main(["fit", str(bad), "--gamma-mhz", "35"]) == 2

    # iteration cap reached: fit record still written, exit 3
    code = main(
        ["fit", csv, "--gamma-mhz", "35", "--gamma0-mhz", "8", "--max-iters", "1", "--out", str(out)]
    )
    assert code == 3
    assert "did not converge" in capsys.readouterr().err
    with open(out / "fit_result.json") as handle:
        assert json.load(handle)["converged"] is False


def test_fit_flat_data_reports_no_signal(tmp_path, capsys):
    out = run_simulate(tmp_path, "flat_run", c_mhz="1e-6", seed=8)
    code = main(
        ["fit", str(out / "simulated.csv"), "--gamma-mhz", "35", "--out", str(out)]
    )
    assert code == 4
    assert "no signal" in capsys.readouterr().err


def test_simulate_bad_inputs(tmp_path, capsys):
    missing = str(tmp_path / "missing.ini")
    assert main(["simulate", "--config", missing]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[emitter]\nnu21_mhz = 3.0\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "invalid input" in err


def test_fit_fluorescence_mode(tmp_path):
    emitter = EmitterParams(nu21=3.0, gamma=GAMMA, gamma0=GAMMA0, alpha=0.25)
    grid = np.linspace(3.0 - 10 * GAMMA, 3.0 + 10 * GAMMA, 200)
    model = fluorescence_spectrum(emitter, 1.2e5 * GAMMA**2 / 4.0, grid, background=300.0)
    noisy = simulate_counts(model, AcquisitionConfig(seed=44))
    path = tmp_path / "fluor.csv"
    from exspec.dataio import write_spectrum_csv

    write_spectrum_csv(str(path), noisy)
    code = main(["fit", str(path), "--mode", "fluorescence", "--out", str(tmp_path)])
    assert code == 0
    with open(tmp_path / "fit_result.json") as handle:
        record = json.load(handle)
    assert record["model"] == "fluorescence"
    assert record["params"]["gamma"] == pytest.approx(GAMMA, rel=0.05)
    assert record["params"]["nu21"] == pytest.approx(3.0, abs=1.0)


def polarscan_dir(tmp_path):
    config = tmp_path / "polar.ini"
    config.write_text(POLAR_TEMPLATE.format(tip_ell=TIP_ELL_DEG, mol_ell=MOL_ELL_DEG))
    out = tmp_path / "scan"
    assert main(["polarscan", "--config", str(config), "--out", str(out)]) == 0
    return out


def test_polarscan_outputs(tmp_path, capsys):
    out = polarscan_dir(tmp_path)
    assert "wrote 31 files" in capsys.readouterr().out
    files = sorted(out.glob("theta_*.csv"))
    assert len(files) == 30
    assert (out / "visibility_matrix.csv").exists()
    assert (out / "manifest.json").exists()

    # the two-dipole resonance sum is analyzer independent
    sums = []
    for path in files:
        parsed = read_spectrum_csv(str(path))
        sums.append(float(parsed.metadata["pair_sum_resonance_cps"]))
    sums = np.asarray(sums)
    assert np.max(np.abs(sums / sums[0] - 1.0)) < 1e-10

    # angle metadata follows the configured ladder
    first = read_spectrum_csv(str(files[0]))
    assert float(first.metadata["theta_deg"]) == pytest.approx(0.0, abs=1e-9)
    assert np.all(first.theta_deg == pytest.approx(0.0, abs=1e-9))
    mid = read_spectrum_csv(str(files[15]))
    assert float(mid.metadata["theta_deg"]) == pytest.approx(90.0, abs=1e-9)

    # model visibility matrix: open dip at theta=0, inverted peak at 90 deg
    matrix = np.loadtxt(out / "visibility_matrix.csv", delimiter=",", skiprows=1)
    assert matrix.shape == (30, 202)
    center = 1 + 100  # grid point exactly at the transition frequency
    assert matrix[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert matrix[15, 0] == pytest.approx(90.0, abs=1e-9)
    assert matrix[0, center] == pytest.approx(-2.0 / 35.0, rel=1e-9)
    assert matrix[15, center] == pytest.approx(0.10, abs=1e-7)


def test_joint_cli_fit_over_scan_files(tmp_path):
    out = polarscan_dir(tmp_path)
    files = [str(p) for p in sorted(out.glob("theta_*.csv"))]
    code = main(
        [
            "fit",
            *files,
            "--joint",
            "--gamma-mhz",
            "35",
            "--gamma0-mhz",
            "8",
            "--tip-guess",
            "0,14",
            "--mol-guess",
            "25,30",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    with open(out / "fit_result.json") as handle:
        record = json.load(handle)
    assert record["model"] == "polar_joint"
    assert record["converged"] is True
    params = record["params"]
    assert params["c_amp"] == pytest.approx(1.0, rel=0.10)
    assert params["tip_ellipticity"] == pytest.approx(0.2860568, abs=0.03)
    assert params["mol_axis"] % math.pi == pytest.approx(math.radians(20.0), abs=0.05)


def parse_report(stdout):
    values = {}
    for line in stdout.strip().splitlines():
        name, value = re.split(r"\s{2,}", line.strip())
        values[name] = float(value)
    return values


def test_report_values(capsys):
    code = main(
        [
            "report",
            "--lifetime-ns",
            "20",
            "--wavelength-nm",
            "615",
            "--gamma-mhz",
            "35",
            "--c-mhz",
            "0.6",
            "--i-e-cps",
            "2.5e5",
        ]
    )
    assert code == 0
    values = parse_report(capsys.readouterr().out)
    assert values["radiative linewidth gamma0 (MHz)"] == pytest.approx(7.95775, rel=1e-4)
    assert values["peak absorption cross-section (m^2)"] == pytest.approx(
        1.80589e-13, rel=1e-4
    )
    assert values["extinction budget gamma/(alpha*gamma0)"] == pytest.approx(
        17.5929, rel=1e-4
    )
    assert values["deepest dip coupling C* (MHz)"] == pytest.approx(0.994718, rel=1e-4)
    assert values["deepest dip visibility"] == pytest.approx(-0.0568411, rel=1e-4)
    assert values["resonance visibility"] == pytest.approx(-0.0478908, rel=1e-4)
    assert values["expected SNR"] == pytest.approx(8.89309, rel=1e-4)
    assert values["direct coherent rate (cps)"] == pytest.approx(5170.16, rel=1e-4)


def test_report_explicit_gamma0_and_errors(tmp_path, capsys):
    code = main(["report", "--gamma-mhz", "35", "--gamma0-mhz", "8"])
    assert code == 0
    values = parse_report(capsys.readouterr().out)
    assert values["extinction budget gamma/(alpha*gamma0)"] == pytest.approx(
        17.5, rel=1e-12
    )

    # enhancement without any gamma0 source
    assert main(["report", "--gamma-mhz", "35"]) == 2
    # nothing requested at all
    assert main(["report"]) == 2
    assert "nothing to report" in capsys.readouterr().err


def test_version_flag():
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
