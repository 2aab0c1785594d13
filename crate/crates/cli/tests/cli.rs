use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pmcmc_cli::commands::{cmd_compare, cmd_run, cmd_sweep, RunSummary};
use pmcmc_cli::config::{apply_overrides, parse_tree, Loaded};
use pmcmc_cli::experiment::{build, load_data};
use pmcmc_cli::runner::{run_chain, ChainFiles};
use pmcmc_cli::with_target;
use tempfile::TempDir;

const LG: &str = r#"
seed = 11
[model]
kind = "linear-gaussian"
gamma = 0.99
sigma1 = 1.0
sigmaY = 20.0
sigmaTheta = 1.0
[data]
length = 100
[conditioner.theta]
mode = "fixed"
[sampler]
kind = "pmmh"
particles = 100
iterations = 10000
"#;

const SV: &str = r#"
seed = 5
[model]
kind = "stochastic-volatility"
muGamma = 0.5
varGamma = 0.5
aX = 1.0
bX = 0.001
aY = 0.1
bY = 0.1
sigma0 = 1.0
[data]
length = 1000
gamma = 0.99
sigmaY = 1.0
[sampler]
kind = "pgibbs"
particles = 20
iterations = 50
"#;

const DPMM: &str = r#"
seed = 2
[model]
kind = "dpmm"
subsetMean = 2.0
[data]
individuals = 10
loci = 5
alleles = 2
populations = 2
[sampler]
kind = "pmmh"
particles = 10
iterations = 300
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pmcmc"));
    c.env("RUST_LOG", "warn");
    c
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin().arg("--config").arg(config).arg("--out").arg(out).args(args).output().unwrap()
}

fn loaded(text: &str, sets: &[&str]) -> Loaded {
    let mut tree = toml::Value::Table(toml::from_str(text).unwrap());
    let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
    apply_overrides(&mut tree, Vec::new(), &sets).unwrap();
    let config = parse_tree(&tree).unwrap();
    Loaded { tree, config }
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn data_rows(p: &Path) -> usize {
    read(p).lines().skip(1).filter(|l| !l.is_empty()).count()
}

fn summary(dir: &Path) -> RunSummary {
    serde_json::from_str(&read(&dir.join("summary.json"))).unwrap()
}

#[test]
fn generate_writes_the_requested_lengths_reproducibly() {
    let tmp = TempDir::new().unwrap();
    let lg = write_config(tmp.path(), "lg.toml", LG);
    let sv = write_config(tmp.path(), "sv.toml", SV);
    for (cfg, rows) in [(&lg, 100), (&sv, 1000)] {
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        assert!(run(&["generate"], cfg, &a).status.success());
        assert!(run(&["generate"], cfg, &b).status.success());
        assert_eq!(data_rows(&a.join("data.csv")), rows);
        assert_eq!(std::fs::read(a.join("data.csv")).unwrap(), std::fs::read(b.join("data.csv")).unwrap());
        let meta: serde_json::Value = serde_json::from_str(&read(&a.join("data.csv.meta.json"))).unwrap();
        assert_eq!(meta["rows"], rows);
        let c = tmp.path().join("c");
        assert!(bin().arg("--config").arg(cfg).arg("--out").arg(&c).args(["--seed", "12", "generate"]).status().unwrap().success());
        assert_ne!(read(&a.join("data.csv")), read(&c.join("data.csv")));
    }
}

#[test]
fn run_reports_sane_acceptance_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "lg.toml", LG);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let out = run(&["run"], &cfg, &a);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rate = summary(&a).replicates[0].acceptance_rate;
    assert!(rate > 0.0 && rate < 1.0, "{rate}");
    assert!(run(&["run"], &cfg, &b).status.success());
    assert_eq!(read(&a.join("chain-0.csv")), read(&b.join("chain-0.csv")));
    let header: Vec<String> = read(&a.join("chain-0.csv")).lines().nth(3).unwrap().split(',').map(String::from).collect();
    assert_eq!(header, ["iteration", "theta", "x1", "cond.theta", "logLik", "accepted"]);

    let v = bin().arg("verify").arg(&a).output().unwrap();
    assert!(v.status.success());
}

#[test]
fn particle_gibbs_accepts_every_iteration() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "sv.toml", SV);
    let out = tmp.path().join("o");
    let o = bin()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--set", "data.length=200", "--set", "conditioner.gamma.mode=\"pseudo\"", "--set", "conditioner.gamma.tau2=0.01"])
        .arg("run")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary(&out).replicates[0].acceptance_rate, 1.0);
}

#[test]
fn replicates_match_across_worker_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "lg.toml", LG);
    let mut outs = Vec::new();
    for (w, par) in [("1", "false"), ("3", "true")] {
        let out = tmp.path().join(format!("w{w}"));
        let o = bin()
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(["--workers", w, "--set", "replicates=3", "--set", "sampler.iterations=300"])
            .args(["--set", &format!("sampler.parallelFilter={par}"), "run"])
            .output()
            .unwrap();
        assert!(o.status.success());
        outs.push(out);
    }
    for r in 0..3 {
        let f = format!("chain-{r}.csv");
        assert_eq!(read(&outs[0].join(&f)), read(&outs[1].join(&f)));
    }
    assert_ne!(read(&outs[0].join("chain-0.csv")), read(&outs[0].join("chain-1.csv")));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let tmp = TempDir::new().unwrap();
    let sets = ["sampler.iterations=600", "output.checkpointEvery=100"];
    let mut full = loaded(LG, &sets);
    full.config.output.dir = tmp.path().join("full");
    cmd_run(&full.config, false).unwrap();

    // Interrupt after a checkpoint at 300, leaving unflushed rows behind.
    let mut part = full.config.clone();
    part.output.dir = tmp.path().join("part");
    std::fs::create_dir_all(&part.output.dir).unwrap();
    let built = build(&part, load_data(&part).unwrap()).unwrap();
    let mut setup = built.setup.clone();
    setup.chain.iterations = 300;
    let files = ChainFiles::in_dir(&part.output.dir, "chain-0");
    let hash = part.hash();
    with_target!(&built.target, |t| run_chain(t, &setup, &part, &hash, 0, Some(&files), false)).unwrap();
    let mut csv = read(&files.csv);
    csv.push_str("301,0.1,0.2,0.1,-1.0,1\n302,0.1");
    std::fs::write(&files.csv, csv).unwrap();

    cmd_run(&part, true).unwrap();
    assert_eq!(read(&full.config.output.dir.join("chain-0.csv")), read(&files.csv));
    let (a, b) = (summary(&full.config.output.dir), summary(&part.output.dir));
    assert_eq!(a.replicates[0].components, b.replicates[0].components);
    assert_eq!(a.replicates[0].acceptance_rate, b.replicates[0].acceptance_rate);

    // A foreign checkpoint is refused.
    let mut other = part.clone();
    other.sampler.particles = 50;
    assert!(cmd_run(&other, true).is_err());
}

fn strip_wall_clock(table: &str) -> Vec<String> {
    table
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(5);
            f.join(",")
        })
        .collect()
}

#[test]
fn sweep_has_one_row_per_point_and_replicate_and_resumes() {
    let tmp = TempDir::new().unwrap();
    let sweep = format!("{LG}\n[sweep]\npath = \"model.sigma1\"\nvalues = [1.0, 10.0, 100.0]\nreplicates = 2\n");
    let mut l = loaded(&sweep, &["sampler.iterations=200", "output.workers=2"]);
    l.config.output.dir = tmp.path().join("s");
    let path = cmd_sweep(&l, false).unwrap();
    let table = read(&path);
    let rows = strip_wall_clock(&table);
    assert_eq!(rows.len(), 1 + 3 * 2);
    assert_eq!(rows[0], "value,replicate,particles,iterations,acceptanceRate,act_theta,ess_theta,act_x1,ess_x1,act_cond.theta,ess_cond.theta");
    assert!(rows[1].starts_with("1.0,0,100,200,"));

    // Drop the last three rows and resume.
    let kept: Vec<&str> = table.lines().collect();
    std::fs::write(&path, kept[..kept.len() - 3].join("\n") + "\n").unwrap();
    cmd_sweep(&l, true).unwrap();
    assert_eq!(strip_wall_clock(&read(&path)), rows);
}

#[test]
fn single_point_sweep_matches_run() {
    let tmp = TempDir::new().unwrap();
    let sweep = format!("{LG}\n[sweep]\npath = \"sampler.particles\"\nvalues = [100]\n");
    let mut l = loaded(&sweep, &["sampler.iterations=300", "output.sweepChains=true"]);
    l.config.output.dir = tmp.path().join("s");
    cmd_sweep(&l, false).unwrap();
    let mut r = loaded(LG, &["sampler.iterations=300"]);
    r.config.output.dir = tmp.path().join("r");
    let s = cmd_run(&r.config, false).unwrap();
    let sweep_chain: Vec<String> = read(&l.config.output.dir.join("chain-v0-r0.csv")).lines().skip(3).map(String::from).collect();
    let run_chain: Vec<String> = read(&r.config.output.dir.join("chain-0.csv")).lines().skip(3).map(String::from).collect();
    assert_eq!(sweep_chain, run_chain);
    let row = read(&l.config.output.dir.join("sweep.csv")).lines().nth(4).unwrap().to_string();
    let act: f64 = row.split(',').nth(6).unwrap().parse().unwrap();
    assert_eq!(Some(act), s.replicates[0].components[0].act);
}

#[test]
fn compare_thins_exactly_and_ranks() {
    let tmp = TempDir::new().unwrap();
    let a = loaded(LG, &["sampler.iterations=4000", "sampler.thin=3"]).config;
    let mut b = a.clone();
    b.seed = 99;
    let cmp = cmd_compare(&[a.clone(), b], &tmp.path().join("c")).unwrap();
    let burn = (0.25 * 4000.0) as usize;
    for e in &cmp.entries {
        assert_eq!(e.retained, (4000 - burn).div_ceil(3));
        assert_eq!(e.particles, 100);
    }
    let chain = read(&tmp.path().join("c/chain-c0-r0.csv"));
    assert_eq!(chain.lines().filter(|l| !l.starts_with('#')).count(), 4001);
    let theta = cmp.rankings.iter().find(|r| r.component == "theta").unwrap();
    let ratio = cmp.entries[0].components[0].ess_per_sec.unwrap() / cmp.entries[1].components[0].ess_per_sec.unwrap();
    assert!((0.5..=2.0).contains(&ratio), "{ratio}");
    assert_eq!(theta.relative_efficiency[theta.order[0]], Some(1.0));
    let v = bin().arg("verify").arg(tmp.path().join("c")).output().unwrap();
    assert!(v.status.success(), "{}", String::from_utf8_lossy(&v.stdout));
}

#[test]
fn dpmm_comparison_lists_particles_and_relative_efficiency() {
    let tmp = TempDir::new().unwrap();
    let a = loaded(DPMM, &[]).config;
    let mut b = loaded(DPMM, &["sampler.particles=20"]).config;
    b.model = match b.model {
        pmcmc_cli::config::ModelConfig::Dpmm(mut m) => {
            m.subset_mean = None;
            pmcmc_cli::config::ModelConfig::Dpmm(m)
        }
        _ => unreachable!(),
    };
    cmd_compare(&[a, b], &tmp.path().join("c")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&read(&tmp.path().join("c/comparison.json"))).unwrap();
    let entries = json["entries"].as_array().unwrap();
    assert_eq!(entries[0]["particles"], 10);
    assert_eq!(entries[1]["particles"], 20);
    let names: Vec<&str> = entries[0]["components"].as_array().unwrap().iter().map(|c| c["component"].as_str().unwrap()).collect();
    assert_eq!(names, ["lambda", "alpha", "coclust", "clusters", "cond.lambda", "cond.alpha"]);
    let lam = json["rankings"].as_array().unwrap().iter().find(|r| r["component"] == "lambda").unwrap();
    assert_eq!(lam["relativeEfficiency"].as_array().unwrap().len(), 2);
}

#[test]
fn tune_reports_a_particle_count() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "lg.toml", LG);
    let out = tmp.path().join("t");
    let o = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).args(["--set", "sampler.tuneRepetitions=30", "tune"]).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t: serde_json::Value = serde_json::from_str(&read(&out.join("tune.json"))).unwrap();
    assert!(t["particles"].as_u64().unwrap() >= 1);
    assert!(!t["measured"].as_array().unwrap().is_empty());
}

#[test]
fn environment_overrides_sit_between_file_and_flags() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "lg.toml", LG);
    let out = tmp.path().join("e");
    let o = bin()
        .env("PMCMC_SAMPLER__ITERATIONS", "20")
        .env("PMCMC_SAMPLER__PARTICLES", "7")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--set", "sampler.particles=9", "run"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let s = summary(&out);
    assert_eq!((s.iterations, s.particles), (20, 9));
}

#[test]
fn failures_exit_with_typed_codes_and_json() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "lg.toml", LG);
    let out = tmp.path().join("x");

    let o = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).args(["--set", "sampler.nope=1", "run"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(err["error"], "config");
    assert_eq!(err["exitCode"], 2);

    let o = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).args(["--set", "conditioner.beta.mode=\"fixed\"", "run"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));

    let o = bin().arg("--config").arg(tmp.path().join("missing.toml")).arg("run").output().unwrap();
    assert_eq!(o.status.code(), Some(4));

    // Observations no particle can explain.
    let data = tmp.path().join("bad.csv");
    std::fs::write(&data, "t,y\n1,inf\n2,0.0\n").unwrap();
    let o = bin()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--set", "data.source=\"file\"", "--set", &format!("data.path=\"{}\"", data.display())])
        .args(["--set", "conditioner.theta.init=0.0", "run"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn verify_flags_a_tampered_hash() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "lg.toml", LG);
    let out = tmp.path().join("v");
    assert!(run(&["--set", "sampler.iterations=50", "run"], &cfg, &out).status.success());
    let csv = read(&out.join("chain-0.csv")).replacen("# config_hash=", "# config_hash=0", 1);
    std::fs::write(out.join("chain-0.csv"), csv).unwrap();
    let o = bin().arg("verify").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["mismatched"][0], "chain-0.csv");
}

#[test]
fn every_model_runs_from_config() {
    let tmp = TempDir::new().unwrap();
    for (name, text, sets) in [
        ("sv-pmmh", SV, vec!["data.length=100", "sampler.kind=\"pmmh\"", "conditioner.gamma.mode=\"fixed\"", "conditioner.beta_x.mode=\"pseudo\"", "conditioner.beta_x.shape=5.0"]),
        ("sv-pl", SV, vec!["data.length=100", "sampler.kind=\"pmmh-pl\"", "conditioner.x1.mode=\"pseudo\"", "conditioner.x1.tau2=1.0"]),
        ("sv-kz", SV, vec!["data.length=100", "conditioner.beta_y.mode=\"pseudo\"", "conditioner.beta_y.kZ=1.0", "conditioner.beta_y.posteriorVar=0.01", "conditioner.beta_y.posteriorMean=1.0"]),
        ("dpmm", DPMM, vec!["sampler.iterations=30"]),
        ("lg-pg", LG, vec!["sampler.kind=\"pgibbs\"", "sampler.iterations=30", "conditioner.x1.mode=\"pseudo\"", "conditioner.x1.kZ=1.0"]),
    ] {
        let mut l = loaded(text, &sets);
        l.config.output.dir = tmp.path().join(name);
        let s = cmd_run(&l.config, false).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(s.replicates[0].acceptance_rate > 0.0, "{name}");
    }
}
