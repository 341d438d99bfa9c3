use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SHORT: &str = r#"
[mechanism]
free = ["Ga3"]
start_at_truth = true

[experiment]
horizon_s = 0.5
"#;

const SMALL_SPACE: &str = r#"
c3h8_nmol = [1.0, 2.0]
o2_nmol = [2.0]
delay_s = [0.0]
temperature_k = [700.0]
horizon = 0.5
"#;

struct Case {
    dir: tempfile::TempDir,
}

impl Case {
    fn new(config: &str) -> Case {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.toml"), config).unwrap();
        Case { dir }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn run(&self, args: &[&str]) -> Output {
        let config = self.dir.path().join("run.toml");
        Command::new(env!("CARGO_BIN_EXE_tap-doe"))
            .args(args)
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(self.out())
            .output()
            .unwrap()
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.out().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&self.read(name)).unwrap()
    }
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstdout: {}\nstderr: {}", o.status.code(), String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest_files(out: &Path) -> Vec<String> {
    let m: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    m["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap().to_string()).collect()
}

#[test]
fn simulate_default_experiment() {
    let case = Case::new("");
    let o = case.run(&["simulate"]);
    ok(&o);
    let csv = case.read("flux.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "time_s,C3H8,O2,C3H6,H2O,CO2");
    assert_eq!(lines.count(), 2500);
    assert!(case.read("flux.svg").contains("<svg"));
    let files = manifest_files(&case.out());
    for f in ["flux.csv", "flux.svg", "flux_noisy.csv", "report.json"] {
        assert!(files.iter().any(|p| p == f), "{f} missing from manifest");
    }
    assert_eq!(case.json("manifest.json")["status"], "ok");
}

#[test]
fn simulate_zero_intensity_gives_zero_flux() {
    let case = Case::new("[experiment]\nc3h8_nmol = 0.0\no2_nmol = 0.0\n[synthetic]\nnoisy = false\n");
    ok(&case.run(&["simulate"]));
    let csv = case.read("flux.csv");
    for line in csv.lines().skip(1) {
        assert!(line.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 0.0), "{line}");
    }
}

#[test]
fn same_seed_reproduces_outputs() {
    let case = Case::new("");
    ok(&case.run(&["simulate", "--seed", "7"]));
    let first = (case.read("flux_noisy.csv"), case.read("report.json"), case.read("manifest.json"));
    ok(&case.run(&["simulate", "--seed", "7"]));
    assert_eq!(first, (case.read("flux_noisy.csv"), case.read("report.json"), case.read("manifest.json")));
    ok(&case.run(&["simulate", "--seed", "8"]));
    assert_ne!(first.0, case.read("flux_noisy.csv"));
}

#[test]
fn missing_mechanism_file_is_a_config_error() {
    let case = Case::new("[mechanism]\nfile = \"nowhere.mech\"\n");
    let o = case.run(&["simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.mech"), "{}", stderr(&o));
}

#[test]
fn malformed_config_and_arguments_exit_2() {
    let case = Case::new("[mechanism]\nfixtures = 1\n");
    assert_eq!(case.run(&["simulate"]).status.code(), Some(2));
    let case = Case::new("[workflow]\nmin_improvement = 0.5\n");
    assert_eq!(case.run(&["simulate"]).status.code(), Some(2));
    let case = Case::new("");
    assert_eq!(case.run(&["simulate", "--criterion", "Q"]).status.code(), Some(2));
    assert_eq!(case.run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn empty_design_space_is_reported() {
    let case = Case::new("[doe_divergence.space]\ndelay_s = []\n");
    let o = case.run(&["doe-divergence"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("design space is empty"), "{}", stderr(&o));
    assert!(case.json("manifest.json")["status"].as_str().unwrap().contains("design space is empty"));
}

#[test]
fn identical_candidates_have_no_discriminating_design() {
    let config = format!(
        "{SHORT}\n[doe_divergence]\ntruth = \"a\"\n[[doe_divergence.models]]\nlabel = \"a\"\nfixture = 1\n\
         [[doe_divergence.models]]\nlabel = \"b\"\nfixture = 1\n[doe_divergence.space]\n{SMALL_SPACE}"
    );
    let case = Case::new(&config);
    let o = case.run(&["workflow-divergence"]);
    ok(&o);
    let report = case.json("report.json");
    assert!(report["warnings"][0].as_str().unwrap().contains("no discriminating design exists"));
    let csv = case.read("divergence.csv");
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(5).unwrap().parse::<f64>().unwrap() == 0.0));
}

#[test]
fn workflow_divergence_scores_all_models() {
    let config = format!("{SHORT}\n[doe_divergence]\nbic_threshold = 1e12\n[doe_divergence.space]\n{SMALL_SPACE}");
    let case = Case::new(&config);
    let o = case.run(&["workflow-divergence"]);
    ok(&o);
    let report = case.json("report.json");
    assert_eq!(report["scores"].as_array().unwrap().len(), 3);
    assert_eq!(report["selected"], "mech2");
    assert_eq!(case.read("bic.csv").lines().count(), 4);
    // A huge threshold always flags the (small relative) gap.
    assert!(report["warnings"][0].as_str().unwrap().starts_with("discrimination lost"));

    let o = case.run(&["workflow-divergence", "--refit"]);
    ok(&o);
    let report = case.json("report.json");
    assert_eq!(report["refit"], true);
    assert!(report["warnings"][0].as_str().unwrap().contains("refit"));
}

#[test]
fn workflow_precision_with_no_iterations_only_fits() {
    let case = Case::new(&format!("{SHORT}\n[workflow]\nmax_iterations = 0\n"));
    ok(&case.run(&["workflow-precision"]));
    let report = case.json("report.json");
    assert_eq!(report["iterations"].as_array().unwrap().len(), 1);
    assert_eq!(report["experiments"].as_array().unwrap().len(), 1);
    assert!(report["stop_reason"].as_str().unwrap().contains("max_iterations"));
}

#[test]
fn workflow_precision_runs_designed_experiments() {
    let config = format!(
        "{SHORT}\n[workflow]\nmax_iterations = 1\nmin_improvement = 1.0001\n[doe_precision.space]\n{SMALL_SPACE}"
    );
    let case = Case::new(&config);
    ok(&case.run(&["workflow-precision"]));
    let report = case.json("report.json");
    let experiments = report["experiments"].as_array().unwrap();
    assert_eq!(experiments.len(), 2);
    assert_eq!(experiments[1]["seed"], 1);
    let iterations = report["iterations"].as_array().unwrap();
    assert_eq!(iterations.len(), 2);
    let d0 = iterations[0]["fit"]["criteria"]["d"].as_f64().unwrap();
    let d1 = iterations[1]["fit"]["criteria"]["d"].as_f64().unwrap();
    assert!(d1 < d0, "second experiment should tighten the estimate: {d0} -> {d1}");
    assert!(iterations[0]["predicted_improvement"].as_f64().unwrap() > 1.0);
}

#[test]
fn workflow_precision_stops_when_improvement_saturates() {
    let config = format!(
        "{SHORT}\n[workflow]\nmax_iterations = 5\nmin_improvement = 1e12\n[doe_precision.space]\n{SMALL_SPACE}"
    );
    let case = Case::new(&config);
    ok(&case.run(&["workflow-precision"]));
    let report = case.json("report.json");
    assert_eq!(report["experiments"].as_array().unwrap().len(), 1);
    assert!(report["stop_reason"].as_str().unwrap().contains("improvement"));
    assert!(report["iterations"][0]["proposed"]["design"].is_object());
}

#[test]
fn doe_precision_subset_and_criterion_flags() {
    let config = SHORT.replace("free = [\"Ga3\"]", "free = [\"Ga3\", \"dG0\"]");
    let case = Case::new(&format!("{config}\n[doe_precision.space]\n{SMALL_SPACE}"));
    ok(&case.run(&["doe-precision", "--criterion", "E", "--subset", "dG0"]));
    let report = case.json("report.json");
    assert_eq!(report["criterion"], "E");
    assert_eq!(report["subset"][0], "dG0");
    assert_eq!(case.read("designs.csv").lines().count(), 3);
    let o = case.run(&["doe-precision", "--subset", "dG7"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn fit_reads_observed_data() {
    let sim = Case::new("[experiment]\nhorizon_s = 0.5\n");
    ok(&sim.run(&["simulate", "--seed", "3"]));
    let data = sim.out().join("flux_noisy.csv");
    let config = format!("{SHORT}\n[estimation]\ndata = \"{}\"\nhessian = \"gauss-newton\"\n", data.display());
    let case = Case::new(&config);
    ok(&case.run(&["fit"]));
    let fit = case.json("fit.json");
    let ga3 = fit["estimates"][0]["value"].as_f64().unwrap();
    assert!((ga3 - 1.54).abs() < 0.01, "Ga3 {ga3}");
    assert!(case.read("estimates.csv").starts_with("name,truth,estimate,std_error,ci95\nGa3,1.54,"));
    assert!(!manifest_files(&case.out()).iter().any(|f| f == "observation.csv"));
}

#[test]
fn predicted_vs_actual_study() {
    let config = SHORT.replace("free = [\"Ga3\"]", "free = [\"Ga3\", \"dG0\"]");
    let case = Case::new(&format!("{config}\n[doe_precision.space]\n{SMALL_SPACE}"));
    ok(&case.run(&["study"]));
    let csv = case.read("study_predicted_vs_actual.csv");
    assert!(csv.starts_with("index,c3h8_nmol,o2_nmol,delay_s,temp_K,predicted_A,actual_A"));
    assert_eq!(csv.lines().count(), 3);
    for k in ["A", "D", "E"] {
        assert!(case.read(&format!("study_{k}.svg")).contains("<circle"));
    }
    assert_eq!(case.json("report.json")["rank_correlation"].as_array().unwrap().len(), 3);
}

#[test]
fn divergence_bic_study_emits_paired_tables() {
    let config = format!("{SHORT}\n[study]\nkind = \"divergence-bic\"\n[doe_divergence.space]\n{SMALL_SPACE}");
    let case = Case::new(&config);
    ok(&case.run(&["study"]));
    for tag in ["norefit", "refit"] {
        let csv = case.read(&format!("divergence_bic_{tag}.csv"));
        assert!(csv.starts_with("c3h8_nmol,o2_nmol,delay_s,temp_K,divergence,bic_mech1,bic_mech2,bic_mech3\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}

#[test]
fn shipped_config_parses() {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/opdh.toml");
    let out = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_tap-doe"))
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    ok(&o);
}
