//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rideshare::config::ScenarioConfig;
use rideshare::experiment::run_carpool_anchor;
use rideshare::matching::random::{instance, Limits};
use rideshare::matching::{brute_force_itinerary, build_stem, preprocess, solve_itinerary, vertices_on_feasible_paths};
use rideshare::network::LinkId;
use rideshare::routing::{dijkstra_route, enumerate_route, RandomRouting};

const BUDGET: usize = 2_000_000;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rideshare"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    match out.status.code() {
        Some(0) => Ok(()),
        code => Err(format!("exit {code:?}: {}", String::from_utf8_lossy(&out.stderr).trim())),
    }
}

fn read_kv(path: &Path) -> Result<BTreeMap<String, String>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(text
        .lines()
        .skip(1)
        .filter_map(|l| l.split_once(','))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

struct Verdict {
    pass: bool,
    detail: String,
}

type Check<'a> = Box<dyn Fn() -> Result<Verdict, String> + 'a>;

fn verdict(pass: bool, detail: String) -> Result<Verdict, String> {
    Ok(Verdict { pass, detail })
}

fn validation(work: &Path) -> Result<Verdict, String> {
    let out = work.join("validate");
    let start = Instant::now();
    cli(&["validate", "--config", path_str(&config("validation.toml")), "--out", path_str(&out), "--replications", "20"])
        .or_else(|e| if e.starts_with("exit Some(1)") { Ok(()) } else { Err(e) })?;
    let elapsed = start.elapsed();
    let kv = read_kv(&out.join("validation_summary.csv"))?;
    let error: f64 = kv["mean_error"].parse().map_err(|_| "bad mean_error")?;
    let reject = kv["reject"] == "true";
    verdict(
        error <= 0.01 && !reject && elapsed <= Duration::from_secs(60),
        format!(
            "mean abs error {error:.4} (<= 0.01), chi-squared {} vs {} reject={reject}, {:.1}s",
            kv["chi_squared"],
            kv["critical"],
            elapsed.as_secs_f64()
        ),
    )
}

fn matcher_equivalence() -> Result<Verdict, String> {
    let start = Instant::now();
    let mut agree = 0;
    let mut feasible = 0;
    for seed in 0..100 {
        let inst = instance(seed, Limits::default());
        let ten = build_stem(&inst.rider, &inst.offers, &inst.network, &inst.times, &inst.params).map_err(|e| e.to_string())?;
        let dp = solve_itinerary(&preprocess(&ten), &inst.rider);
        let bf = brute_force_itinerary(&ten, &inst.rider, BUDGET).map_err(|e| e.to_string())?;
        let same = match (&dp, &bf) {
            (Some(a), Some(b)) => {
                feasible += 1;
                a.total_cost == b.total_cost
            }
            (None, None) => true,
            _ => false,
        };
        agree += usize::from(same);
    }
    let elapsed = start.elapsed();
    verdict(
        agree == 100 && elapsed <= Duration::from_secs(30),
        format!("{agree}/100 agree ({feasible} feasible), {:.2}s", elapsed.as_secs_f64()),
    )
}

fn pruning_soundness() -> Result<Verdict, String> {
    let mut sound = 0;
    let mut removed = 0;
    for seed in 0..100 {
        let inst = instance(seed, Limits::default());
        let ten = build_stem(&inst.rider, &inst.offers, &inst.network, &inst.times, &inst.params).map_err(|e| e.to_string())?;
        let pruned = preprocess(&ten);
        let used = vertices_on_feasible_paths(&ten, &inst.rider, BUDGET).map_err(|e| e.to_string())?;
        removed += pruned.removed.len();
        sound += usize::from(pruned.removed.iter().all(|v| !used.contains(v)));
    }
    verdict(sound == 100, format!("{sound}/100 sound ({removed} vertices removed in total)"))
}

fn dijkstra_optimality() -> Result<Verdict, String> {
    let mut exact = 0;
    for seed in 0..100 {
        let r = RandomRouting::generate(seed, 8);
        let a = dijkstra_route(&r.network, |l| r.weight(l), r.origin, r.dest);
        let b = enumerate_route(&r.network, |l| r.weight(l), r.origin, r.dest);
        let same = match (a, b) {
            (Some(a), Some(b)) => a.total_cost == b.total_cost && a.links == b.links,
            (None, None) => true,
            _ => false,
        };
        exact += usize::from(same);
    }
    verdict(exact == 100, format!("{exact}/100 identical to enumeration"))
}

fn sweep_trend(work: &Path) -> Result<Verdict, String> {
    let out = work.join("sweep");
    let start = Instant::now();
    cli(&[
        "sweep",
        "--config",
        path_str(&config("sweep.toml")),
        "--out",
        path_str(&out),
        "--levels",
        "1.0,0.75,0.5,0.25",
        "--replications",
        "20",
    ])?;
    let elapsed = start.elapsed();
    let text = fs::read_to_string(out.join("sweep.csv")).map_err(|e| e.to_string())?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let col = headers.iter().position(|h| h == "match_rate_mean").ok_or("no match_rate_mean column")?;
    let means: Vec<f64> = reader
        .records()
        .map(|r| r.map_err(|e| e.to_string())?[col].parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let monotone = means.len() == 4 && means.windows(2).all(|w| w[1] <= w[0]);
    let in_range = means.iter().all(|m| (0.35..=0.70).contains(m));
    let target = [0.60, 0.60, 0.50, 0.45];
    let stretch = means.iter().zip(target).all(|(m, t)| (m - t).abs() <= 0.10);
    verdict(
        monotone && in_range && elapsed <= Duration::from_secs(300),
        format!(
            "means {:?}, monotone={monotone}, in [0.35,0.70]={in_range}, within 10pp of table={stretch}, {:.1}s",
            means.iter().map(|m| (m * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            elapsed.as_secs_f64()
        ),
    )
}

fn carpool_anchor() -> Result<Verdict, String> {
    let cfg = ScenarioConfig::load(config("validation.toml")).map_err(|e| e.to_string())?;
    let net = cfg.load_network().map_err(|e| e.to_string())?;
    let anchors = run_carpool_anchor(&cfg, &net, 0.25, 20, cfg.seed).map_err(|e| e.to_string())?;
    let a = anchors.iter().find(|a| a.link == LinkId(2)).ok_or("link 2 has no carpool lane")?;
    verdict(
        a.relative_gap() <= 0.05,
        format!(
            "carpool {:.2} veh/h vs general lane {:.2} veh/h, gap {:.2}%",
            a.carpool_flow,
            a.general_lane_flow,
            100.0 * a.relative_gap()
        ),
    )
}

fn csv_files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".csv") {
            files.insert(name, fs::read(entry.path()).map_err(|e| e.to_string())?);
        }
    }
    Ok(files)
}

fn determinism(work: &Path) -> Result<Verdict, String> {
    let commands = [
        ("validate", "validation.toml", vec!["--replications", "3"]),
        ("sweep", "sweep.toml", vec!["--replications", "3"]),
        ("run", "default.toml", vec![]),
    ];
    let mut notes = Vec::new();
    let mut all = true;
    for (cmd, cfg, extra) in &commands {
        let mut outputs = Vec::new();
        for k in 0..2 {
            let out = work.join(format!("det-{cmd}-{k}"));
            let cfg_path = config(cfg);
            let mut args = vec![*cmd, "--config", path_str(&cfg_path), "--out", path_str(&out), "--seed", "11"];
            args.extend(extra.iter().copied());
            cli(&args).or_else(|e| if e.starts_with("exit Some(1)") { Ok(()) } else { Err(e) })?;
            outputs.push(csv_files(&out)?);
        }
        let same = !outputs[0].is_empty() && outputs[0] == outputs[1];
        all &= same;
        notes.push(format!("{cmd}: {} files {}", outputs[0].len(), if same { "identical" } else { "DIFFER" }));
    }
    verdict(all, notes.join("; "))
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn main() -> ExitCode {
    let work = tempfile::tempdir().expect("temporary directory");
    let work = work.path();
    let criteria: Vec<(&str, Check)> = vec![
        ("1 validation reproduction", Box::new(|| validation(work))),
        ("2 matcher oracle equivalence", Box::new(matcher_equivalence)),
        ("3 pruning soundness", Box::new(pruning_soundness)),
        ("4 dijkstra optimality", Box::new(dijkstra_optimality)),
        ("5 capacity sweep trend", Box::new(|| sweep_trend(work))),
        ("6 carpool calibration anchor", Box::new(carpool_anchor)),
        ("7 determinism", Box::new(|| determinism(work))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let (pass, detail) = match check() {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!("{} criterion {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
