use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use proptest::prelude::*;

use posesync::config::{
    InertiaConfig, InertiaMatrix, InitialCondition, PoseSpec, RandomInit, RotationSampling,
    RotationSpec,
};
use posesync::SimConfig;
use posesync_cli::output::{plot_script, trace_header};
use posesync_cli::{config_to_toml, load_config, parse_config, save_config, CliError};

fn posesync(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posesync"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, config: &SimConfig) -> String {
    let path = dir.join(name);
    save_config(config, &path).unwrap();
    path.to_str().unwrap().to_string()
}

fn diag_weight(d: [f64; 3]) -> SimConfig {
    let mut c = SimConfig::fig2();
    c.weight.a = [[d[0], 0.0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]]];
    c.weight.b = [0.0; 3];
    c.weight.d = 1.0;
    c.synergy = Default::default();
    c
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn preset_round_trips_through_toml() {
    let c = SimConfig::fig2();
    let text = config_to_toml(&c).unwrap();
    assert_eq!(parse_config(&text).unwrap(), c);
}

#[test]
fn explicit_config_round_trips_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = SimConfig::fig2();
    c.topology.n_agents = 2;
    c.topology.edges = vec![(1, 2)];
    c.inertia = vec![
        InertiaConfig {
            mass: 1.5,
            j: InertiaMatrix::Full([[0.1, 0.01, 0.0], [0.01, 0.2, 0.0], [0.0, 0.0, 0.3]]),
        },
        InertiaConfig {
            mass: 2.0,
            j: InertiaMatrix::Diagonal([0.1, 0.1, 0.2]),
        },
    ];
    c.synergy.overrides.u_c1 = Some([0.0, 0.0, 1.0]);
    c.initial = InitialCondition::Explicit {
        poses: vec![
            PoseSpec {
                rotation: RotationSpec::AxisAngle {
                    axis: [0.0, 0.0, 1.0],
                    angle: 0.3,
                },
                translation: [1.0, 2.0, 3.0],
            },
            PoseSpec {
                rotation: RotationSpec::Matrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
                translation: [0.0; 3],
            },
        ],
        twists: Some(vec![[0.1, 0.0, 0.0, 0.0, 0.0, 0.2], [0.0; 6]]),
        theta: Some(vec![0.5]),
    };
    let path = write_config(dir.path(), "explicit.toml", &c);
    let back = load_config(Path::new(&path)).unwrap();
    assert_eq!(back, c);
    back.build().unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn numeric_fields_round_trip_exactly(
        k in (1e-3f64..1e3, 1e-3f64..1e3, 1e-3f64..1e3, 1e-3f64..1e3),
        h in 1e-5f64..1e-2,
        theta in 0.01f64..3.0,
        seed in any::<u64>(),
        half_box in 0.0f64..100.0,
    ) {
        let mut c = SimConfig::fig2();
        c.gains.k_x = k.0;
        c.gains.k_xi = k.1;
        c.gains.k_e = k.2;
        c.gains.k_theta = k.3;
        c.integrator.h = h;
        c.synergy.overrides.theta_set = Some(vec![theta, -theta / 3.0]);
        c.initial = InitialCondition::Random(RandomInit {
            seed,
            half_box,
            twist_std: 0.5,
            rotations: RotationSampling::Haar,
        });
        let text = config_to_toml(&c).unwrap();
        prop_assert_eq!(parse_config(&text).unwrap(), c);
    }
}

#[test]
fn trace_header_layout() {
    let h = trace_header(2, 2).join(",");
    assert_eq!(
        h,
        "t,j,theta_1,theta_2,muU_1,muU_2,rotErr_1,rotErr_2,posErr_1,posErr_2,\
         omega_1x,omega_1y,omega_1z,v_1x,v_1y,v_1z,\
         omega_2x,omega_2y,omega_2z,v_2x,v_2y,v_2z,Vbar,Ubar,kinetic"
    );
    assert_eq!(trace_header(5, 6).len(), 2 + 4 * 5 + 6 * 6 + 3);
}

#[test]
fn plot_script_names_existing_columns() {
    let (m, n) = (5, 6);
    let script = plot_script(m, n);
    assert!(!script.contains('@'));
    assert!(script.contains("M = 5") && script.contains("N = 6"));
    let header = trace_header(m, n);
    let mut names: Vec<String> = vec!["t".into(), "Vbar".into()];
    for k in 1..=m {
        names.extend(["rotErr", "posErr", "theta"].map(|p| format!("{p}_{k}")));
    }
    for i in 1..=n {
        for q in ["omega", "v"] {
            names.extend(["x", "y", "z"].map(|c| format!("{q}_{i}{c}")));
        }
    }
    for name in &names {
        assert!(header.contains(name), "{name} missing from header");
    }
    for pattern in ["rotErr_%d", "posErr_%d", "theta_%d", "omega_%dx", "v_%dz", "\"Vbar\""] {
        assert!(script.contains(pattern), "{pattern} not plotted");
    }
}

#[test]
fn exit_code_mapping() {
    use posesync::Error;
    let code = |e: Error| CliError::from(e).exit_code();
    assert_eq!(code(Error::InvalidConfig("x".into())), 1);
    assert_eq!(
        code(Error::CertificateViolation {
            t: 0.0,
            j: 0,
            detail: String::new()
        }),
        2
    );
    assert_eq!(code(Error::NumericalDivergence { t: 0.0, j: 0 }), 3);
    assert_eq!(code(Error::OracleFailure("x".into())), 4);
    assert_eq!(CliError::NotConverged(String::new()).exit_code(), 5);
}

#[test]
fn check_params_on_preset_reports_case_and_gap() {
    let o = posesync(&["check-params", "--preset", "fig2"]);
    let text = stdout(&o);
    assert!(text.contains("case: 2"), "{text}");
    assert!(text.contains("Delta_W*: 0.892"), "{text}");
    assert_eq!(text.matches("critical point axis").count(), 3);
    // the preset's delta override exceeds its bound
    assert_eq!(o.status.code(), Some(1));
    assert!(text.contains("warning: delta"));
}

#[test]
fn check_params_synthesized_diagonal_weight_passes() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "diag.toml", &diag_weight([1.0, 2.0, 3.0]));
    let o = posesync(&["check-params", "--config", &path]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.contains("case: 2"));
    assert!(text.contains("Delta_W*: 1.000000"));
    assert!(text.contains("all strict inequalities hold"));
}

#[test]
fn check_params_isotropic_weight_has_no_gap() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "iso.toml", &diag_weight([2.0, 2.0, 2.0]));
    let o = posesync(&["check-params", "--config", &path]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gap"));
}

#[test]
fn single_agent_rejected_at_load() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = SimConfig::fig2();
    c.topology.n_agents = 1;
    c.topology.edges.clear();
    let path = write_config(dir.path(), "one.toml", &c);
    let out = dir.path().join("out");
    let o = posesync(&["run", "--config", &path, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn malformed_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "topology = 3\n").unwrap();
    let o = posesync(&["check-params", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let missing = posesync(&["check-params", "--config", "/nonexistent/x.toml"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn oracles_pass_from_the_command_line() {
    for which in ["gradcheck", "rank", "gap", "exp"] {
        let o = posesync(&["oracle", "--preset", "fig2", which, "--samples", "20"]);
        assert_eq!(o.status.code(), Some(0), "{which}: {}", stdout(&o));
        assert!(stdout(&o).contains("pass"));
    }
}

#[test]
fn short_preset_run_writes_consistent_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = SimConfig::fig2();
    c.integrator.t_end = 0.05;
    let path = write_config(dir.path(), "short.toml", &c);
    let out = dir.path().join("out");
    let o = posesync(&["run", "--config", &path, "--out", out.to_str().unwrap()]);
    // too short to synchronize
    assert_eq!(o.status.code(), Some(5));

    let trace = csv_rows(&fs::read_to_string(out.join("trace.csv")).unwrap());
    assert_eq!(trace[0], trace_header(5, 6));
    assert!(trace.len() > 2);
    for row in &trace[1..] {
        assert_eq!(row.len(), trace[0].len());
        for field in row.iter().skip(2) {
            let mantissa = field.trim_start_matches('-').split('e').next().unwrap();
            assert_eq!(mantissa.len(), 18, "{field} is not 17 significant digits");
            field.parse::<f64>().unwrap();
        }
    }
    assert_eq!(trace[1][1], "0");

    let events = csv_rows(&fs::read_to_string(out.join("events.csv")).unwrap());
    assert_eq!(events[0].join(","), "t,j,edge,theta_before,theta_after,muU,Vbar_before,Vbar_after");
    let initial: Vec<&Vec<String>> = events[1..].iter().filter(|r| r[1] == "1").collect();
    assert_eq!(initial.len(), 5);
    for r in &initial {
        assert_eq!(r[0].parse::<f64>().unwrap(), 0.0);
        let (before, after) = (r[6].parse::<f64>().unwrap(), r[7].parse::<f64>().unwrap());
        assert!(after < before);
    }

    let inputs = csv_rows(&fs::read_to_string(out.join("inputs.csv")).unwrap());
    assert_eq!(inputs[0].len(), 2 + 6 * 6);
    assert_eq!(inputs.len(), trace.len());

    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    for key in ["status: not synchronized", "jumps:", "edge resets:", "jump budget:", "certificates: held", "wall time:"] {
        assert!(summary.contains(key), "{key} missing:\n{summary}");
    }
    let plot = fs::read_to_string(out.join("plot.gp")).unwrap();
    assert!(plot.contains("M = 5"));
}

#[test]
fn trivial_batch_converges_with_no_jumps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mc");
    let o = posesync(&[
        "montecarlo",
        "--preset",
        "fig2",
        "--runs",
        "4",
        "--half-box",
        "0",
        "--identity-rotations",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let agg = fs::read_to_string(out.join("aggregate.txt")).unwrap();
    assert!(agg.contains("converged with certificates: 4"), "{agg}");
    assert!(agg.contains("max jumps: 0"));
    let runs = csv_rows(&fs::read_to_string(out.join("runs.csv")).unwrap());
    assert_eq!(runs.len(), 5);
}

#[test]
fn batch_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = SimConfig::fig2();
    c.integrator.t_end = 0.05;
    let path = write_config(dir.path(), "short.toml", &c);
    let run = |name: &str| {
        let out = dir.path().join(name);
        posesync(&[
            "montecarlo", "--config", &path, "--runs", "3", "--seed", "11", "--out",
            out.to_str().unwrap(),
        ]);
        (
            fs::read(out.join("runs.csv")).unwrap(),
            fs::read(out.join("aggregate.txt")).unwrap(),
        )
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(a, b);
    let other = dir.path().join("c");
    posesync(&[
        "montecarlo", "--config", &path, "--runs", "3", "--seed", "12", "--out",
        other.to_str().unwrap(),
    ]);
    assert_ne!(fs::read(other.join("runs.csv")).unwrap(), a.0);
}

#[test]
fn print_config_output_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let o = posesync(&["print-config", "--preset", "fig2"]);
    assert_eq!(o.status.code(), Some(0));
    let path = dir.path().join("printed.toml");
    fs::write(&path, &o.stdout).unwrap();
    assert_eq!(load_config(&path).unwrap(), SimConfig::fig2());
}
