use std::path::Path;
use std::process::{Command, Output};

fn sivsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sivsim")).args(args).output().expect("binary runs")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut a = args.to_vec();
    a.extend(["--out", out]);
    sivsim(&a)
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn report_value(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in\n{report}"))
        .parse()
        .unwrap()
}

/// Data rows of a CSV as (first column, named column).
fn column(csv: &str, name: &str) -> Vec<(String, f64)> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap_or_else(|| panic!("no column {name}"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[i].parse().unwrap_or(f64::NAN))
        })
        .collect()
}

#[test]
fn narrow_cpt_preset_reports_width_and_t2_star() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["--preset", "fig3c"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fit = read(dir.path(), "fit.txt");
    let fwhm = report_value(&fit, "fwhm_hz");
    let t2 = report_value(&fit, "t2_star_s");
    assert!((fwhm / 4.5e6 - 1.0).abs() < 0.05, "{fwhm}");
    assert!((t2 / 35e-9 - 1.0).abs() < 0.05, "{t2}");
    for f in ["data.csv", "dip_fit.csv", "plot.svg", "manifest.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert!(read(dir.path(), "dip_fit.csv").starts_with("power,fwhm_hz,depth,center_hz\n"));
}

#[test]
fn fig1d_counts_two_then_four_features() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(dir.path(), &["--preset", "fig1d"]).status.success());
    let fit = read(dir.path(), "fit.txt");
    assert_eq!(report_value(&fit, "single.peaks"), 2.0);
    assert_eq!(report_value(&fit, "single.dips"), 0.0);
    assert_eq!(report_value(&fit, "pumped.peaks") + report_value(&fit, "pumped.dips"), 4.0);
    assert!(read(dir.path(), "data.csv").starts_with("detuning_hz,counts_hz\n"));
}

#[test]
fn malformed_config_exits_2_naming_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "# test\nrun.scenario = cpt\ncpt.t2_star = 35 GHz\n").unwrap();
    let o = run_in(&dir.path().join("out"), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("cpt.t2_star") && err.contains("line 3"), "{err}");

    std::fs::write(&cfg, "cpt.t2_stars = 35 ns\n").unwrap();
    let o = run_in(&dir.path().join("out"), &["--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cpt.t2_stars"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["--preset", "fig9z"],
        vec!["--set", "env.nothing=1"],
        vec!["--set", "env.temperature=-1 K"],
        vec!["--config", "/nonexistent/config.txt"],
        vec!["--preset", "fig3d-hyperfine", "--set", "hyperfine.coupling=0 Hz"],
    ] {
        let o = run_in(dir.path(), &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn numerical_failure_exits_3() {
    // A readout too short to reach its plateau cannot yield a leading edge.
    let dir = tempfile::tempdir().unwrap();
    let seq = "spin.sequence=duration 900us; channel init laser D1 sat 0.25; channel read laser D2 sat 10; \
               pulse init 0 500us; gap 500us; pulse read 600us 900us";
    let o = run_in(dir.path(), &["--preset", "fig2b-spinT1", "--set", seq]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("longer readout"));
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    let noisy = ["--preset", "fig2b-spinT1", "--set", "detector.shot_noise=true", "--set", "detector.efficiency=1", "--seed", "11"];
    assert!(run_in(&a, &noisy).status.success());
    let manifest = a.join("manifest.txt");
    assert!(run_in(&b, &["--config", manifest.to_str().unwrap()]).status.success());
    for f in ["data.csv", "fit.txt", "plot.svg", "manifest.txt"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    // The recorded hashes match the files on disk.
    for (name, hex) in siv_core::output::manifest_hashes(&read(&a, "manifest.txt")) {
        assert_eq!(siv_core::output::sha256_hex(read(&a, &name).as_bytes()), hex, "{name}");
    }
    // A different seed changes the noisy data.
    let c = root.path().join("c");
    let mut other = noisy.to_vec();
    *other.last_mut().unwrap() = "12";
    assert!(run_in(&c, &other).status.success());
    assert_ne!(read(&a, "data.csv"), read(&c, "data.csv"));
}

#[test]
fn no_plot_skips_svg() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(dir.path(), &["--preset", "fig3a-cpt", "--no-plot"]).status.success());
    assert!(!dir.path().join("plot.svg").exists());
    assert!(!read(dir.path(), "manifest.txt").contains("plot.svg"));
}

#[test]
fn sequence_file_is_read_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("mis.seq"),
        "# misaligned readout\nduration 10us\nrise_fall 60ns\nchannel d laser D1 sat 0.3\npulse d 0 5us\ngap 5us\npulse d 5us 10us\n",
    )
    .unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "spin.sequence = @mis.seq\n").unwrap();
    let out = dir.path().join("out");
    let o = run_in(&out, &["--preset", "figS4-misaligned", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read(&out, "manifest.txt").contains("spin.sequence = duration 10us; rise_fall 60ns;"));
    let t1 = report_value(&read(&out, "fit.txt"), "tau");
    assert!((t1 / 3.4e-6 - 1.0).abs() < 0.05, "{t1}");

    std::fs::write(&cfg, "spin.sequence = @missing.seq\n").unwrap();
    assert_eq!(run_in(&out, &["--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn empty_sweep_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["--set", "run.scenario=sweep", "--set", "sweep.values="]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(dir.path(), "data.csv"), "env.temperature,t1_s,t1_err_s,rate_hz,errors\n");
}

#[test]
fn temperature_sweep_rate_is_linear() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &["--preset", "fig2c-orbitalT1", "--set", "run.scenario=sweep", "--set", "sweep.values=4.5K, 8K, 12K, 16K, 20K, 22K"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(dir.path(), "data.csv");
    let pts: Vec<(f64, f64)> = column(&csv, "rate_hz")
        .into_iter()
        .map(|(t, r)| (siv_core::units::parse_quantity(&t, siv_core::units::Dimension::Temperature).unwrap(), r))
        .collect();
    assert_eq!(pts.len(), 6);
    assert_eq!(pts[0].0, 4.5);
    let fit = siv_core::analysis::fit_linear(&pts).unwrap();
    assert!(fit.param("r_squared") >= 0.99, "{csv}");
    assert!(column(&csv, "errors").iter().all(|(_, e)| e.is_nan()));
}

#[test]
fn power_sweep_width_is_monotone_and_job_count_invariant() {
    let root = tempfile::tempdir().unwrap();
    let args = |jobs: &'static str| {
        vec![
            "--preset",
            "fig3b-power",
            "--set",
            "run.scenario=sweep",
            "--set",
            "sweep.scenario=cpt",
            "--set",
            "sweep.axis=cpt.powers",
            "--set",
            "sweep.values=0.05, 0.1, 0.25, 0.5, 1, 2",
            "--jobs",
            jobs,
        ]
    };
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    assert!(run_in(&a, &args("1")).status.success());
    assert!(run_in(&b, &args("4")).status.success());
    let csv = read(&a, "data.csv");
    assert_eq!(csv, read(&b, "data.csv"));
    let w: Vec<f64> = column(&csv, "fwhm_hz").into_iter().map(|(_, v)| v).collect();
    assert_eq!(w.len(), 6);
    assert!(w.windows(2).all(|p| p[1] > p[0]), "{w:?}");
}

#[test]
fn sweep_point_failure_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &[
            "--preset",
            "fig3d-hyperfine",
            "--set",
            "run.scenario=sweep",
            "--set",
            "sweep.scenario=hyperfine",
            "--set",
            "sweep.axis=hyperfine.coupling",
            "--set",
            "sweep.values=34.5 MHz, 0 Hz",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(dir.path(), "data.csv");
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("34.5 MHz,") && rows[1].ends_with(','), "{csv}");
    assert!(rows[2].starts_with("0 Hz,,,") && rows[2].len() > 10, "{csv}");
}

#[test]
fn lists() {
    let o = sivsim(&["--list-presets"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 10);
    let o = sivsim(&["--list-keys"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("env.temperature = 4.5 K"));
}
