//! Acceptance suite: one PASS / FAIL / SKIP line per criterion.
//!
//! Run with `cargo test -p durel-cli --test acceptance`. The published-data
//! criteria read `tests/fixtures/durel/` (or `$DUREL_FIXTURE_DIR`) holding
//! `key.csv`, `judgments.csv` and `classes.csv` (`lemma,class`), and are
//! skipped with a notice when those files are absent.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use durel_core::agreement::{rank_correlation, spearman, AgreementReport, Significance};
use durel_core::corpus::extract_uses;
use durel_core::judgments::{assemble_matrix, read_judgments_csv};
use durel_core::measures::{all_measures, ChangeClass, DEFAULT_THRESHOLD};
use durel_core::sampling::{blinding_violations, build_study_pairs_with, build_task};
use durel_core::synthetic::{generate_corpus, simulate_judgments, SyntheticTarget};
use durel_core::{
    DuplicatePolicy, GroupId, JudgmentValue, PeriodSpec, SamplingConfig, StudyRng, TargetSpec, TaskKey, Use, UsePair,
};
use serde_json::{json, Value};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Verdict::{Fail, Pass, Skip};

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

// ---------------------------------------------------------------- ranks

fn oracle_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let smaller = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect()
}

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn spearman_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = StudyRng::from_seed(0xacce_0001);
    let (mut checked, mut worst, mut mismatches) = (0, 0.0f64, 0);
    while checked < 1000 {
        let n = 3 + rng.below(10);
        let x: Vec<u8> = (0..n).map(|_| 1 + rng.below(4) as u8).collect();
        let y: Vec<u8> = (0..n).map(|_| 1 + rng.below(4) as u8).collect();
        let fx: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let fy: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let jx: Vec<_> = x.iter().map(|&v| JudgmentValue::new(v.into()).ok()).collect();
        let jy: Vec<_> = y.iter().map(|&v| JudgmentValue::new(v.into()).ok()).collect();
        let constant = x.iter().all(|&v| v == x[0]) || y.iter().all(|&v| v == y[0]);
        match spearman(&jx, &jy) {
            Ok(c) if !constant => {
                let diff = (c.rho - oracle_pearson(&oracle_ranks(&fx), &oracle_ranks(&fy))).abs();
                worst = worst.max(diff);
                if diff >= 1e-12 || c.n != n {
                    mismatches += 1;
                }
                checked += 1;
            }
            // a constant vector has no rank variance; both sides must agree on that
            Err(_) if constant => {}
            _ => {
                mismatches += 1;
                checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        mismatches == 0 && secs < 5.0,
        format!("{checked} vectors, max |diff| {worst:.1e}, {mismatches} mismatches, {secs:.2} s (limit 5 s)"),
    )
}

fn classical_formula() -> Verdict {
    let mut rng = StudyRng::from_seed(0xacce_0002);
    let (mut worst, mut bad) = (0.0f64, 0);
    for _ in 0..1000 {
        let n = 3 + rng.below(48);
        let x: Vec<f64> = (1..=n).map(|v| v as f64).collect();
        let mut y = x.clone();
        rng.shuffle(&mut y);
        let d2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
        let nf = n as f64;
        let classical = 1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0));
        match rank_correlation(&x, &y) {
            Ok(c) => {
                let diff = (c.rho - classical).abs();
                worst = worst.max(diff);
                bad += usize::from(diff >= 1e-12);
            }
            Err(_) => bad += 1,
        }
    }
    verdict(bad == 0, format!("1000 permutations, n in 3..=50, max |diff| {worst:.1e}"))
}

// ---------------------------------------------------------------- fixtures

fn fixture_dir() -> PathBuf {
    std::env::var_os("DUREL_FIXTURE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/durel"))
}

struct Fixture {
    key: TaskKey,
    judgments: Vec<durel_core::Judgment>,
    classes: HashMap<String, String>,
}

fn load_fixture() -> Result<Option<Fixture>, String> {
    let dir = fixture_dir();
    let [key, judgments, classes] = ["key.csv", "judgments.csv", "classes.csv"].map(|f| dir.join(f));
    if !key.exists() || !judgments.exists() {
        return Ok(None);
    }
    let open = |p: &Path| fs::File::open(p).map_err(|e| format!("{}: {e}", p.display()));
    let key = TaskKey::read_csv(open(&key)?).map_err(|e| e.to_string())?;
    let judgments = read_judgments_csv(open(&judgments)?).map_err(|e| e.to_string())?;
    let mut class_map = HashMap::new();
    if classes.exists() {
        let mut r = csv::Reader::from_reader(open(&classes)?);
        for rec in r.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            class_map.insert(rec[0].to_owned(), rec[1].to_uppercase());
        }
    }
    Ok(Some(Fixture {
        key,
        judgments,
        classes: class_map,
    }))
}

fn skip_notice() -> Verdict {
    Skip(format!(
        "published judgment data not found in {} (needs key.csv, judgments.csv, classes.csv)",
        fixture_dir().display()
    ))
}

fn published_agreement() -> Verdict {
    let start = Instant::now();
    let fx = match load_fixture() {
        Ok(Some(f)) => f,
        Ok(None) => return skip_notice(),
        Err(e) => return Fail(e),
    };
    let matrix = match assemble_matrix(&fx.judgments, &fx.key, DuplicatePolicy::Reject) {
        Ok(m) => m,
        Err(e) => return Fail(e.to_string()),
    };
    let report = match AgreementReport::compute(&matrix, Significance::Auto) {
        Ok(r) => r,
        Err(e) => return Fail(e.to_string()),
    };
    let rho = |a: &str, b: &str| report.get(a, b).and_then(|r| r.as_ref().ok()).map(|s| s.rho);
    let rest4 = report.rest("4").and_then(|r| r.as_ref().ok()).map(|s| s.rho);
    let within = |got: Option<f64>, want: f64| got.is_some_and(|g| (g - want).abs() <= 0.01);
    let all_p = report.pairwise.iter().all(|c| c.result.as_ref().is_ok_and(|s| s.p < 0.01));
    let secs = start.elapsed().as_secs_f64();
    let ok = within(rho("1", "2"), 0.59)
        && within(rho("4", "5"), 0.68)
        && within(rest4, 0.75)
        && within(report.mean_pairwise, 0.66)
        && all_p
        && secs < 10.0;
    let show = |v: Option<f64>| v.map_or("undefined".to_owned(), |v| format!("{v:.3}"));
    verdict(
        ok,
        format!(
            "rho(1,2) {} [0.59], rho(4,5) {} [0.68], rest(4) {} [0.75], mean {} [0.66], all p < 0.01: {all_p}, {secs:.2} s",
            show(rho("1", "2")),
            show(rho("4", "5")),
            show(rest4),
            show(report.mean_pairwise)
        ),
    )
}

fn published_means() -> Verdict {
    let fx = match load_fixture() {
        Ok(Some(f)) if !f.classes.is_empty() => f,
        Ok(_) => return skip_notice(),
        Err(e) => return Fail(e),
    };
    let matrix = match assemble_matrix(&fx.judgments, &fx.key, DuplicatePolicy::Reject) {
        Ok(m) => m,
        Err(e) => return Fail(e.to_string()),
    };
    let measures = match all_measures(&matrix, &fx.key, DEFAULT_THRESHOLD) {
        Ok(m) => m,
        Err(e) => return Fail(e.to_string()),
    };
    let mean_of = |class: &str| {
        let v: Vec<f64> = measures
            .iter()
            .filter(|m| fx.classes.get(&m.target.lemma).map(String::as_str) == Some(class))
            .filter_map(|m| m.delta_later)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let (red, inn) = (mean_of("REDUCTIVE"), mean_of("INNOVATIVE"));
    let ok = red.is_some_and(|r| (r - 0.39).abs() <= 0.02) && inn.is_some_and(|i| (i + 0.18).abs() <= 0.02);
    let show = |v: Option<f64>| v.map_or("undefined".to_owned(), |v| format!("{v:.3}"));
    verdict(
        ok,
        format!(
            "reductive mean {} [0.39 +/- 0.02], innovative mean {} [-0.18 +/- 0.02]",
            show(red),
            show(inn)
        ),
    )
}

// ---------------------------------------------------------------- sampling

fn pool(tag: &str, n: usize, year: i32) -> Vec<Use> {
    (0..n)
        .map(|i| Use {
            use_id: format!("{tag}:{i}:0"),
            target: TargetSpec::new("Feder", Some("NN")).unwrap(),
            year,
            prev_text: String::new(),
            sent_text: format!("die <<Feder>> {tag} {i}"),
            next_text: String::new(),
            token_index: 1,
        })
        .collect()
}

fn check_group(pairs: &[UsePair], g: GroupId, k: usize, unique: bool) -> Result<(), String> {
    let group: Vec<&UsePair> = pairs.iter().filter(|p| p.group == g).collect();
    if group.len() != k {
        return Err(format!("{g}: {} pairs instead of {k}", group.len()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut seen = std::collections::HashSet::new();
    for p in &group {
        if p.first.use_id == p.second.use_id {
            return Err(format!("{g}: self-pair {}", p.first.use_id));
        }
        let (a, b) = (p.first.use_id.as_str(), p.second.use_id.as_str());
        if !seen.insert(if a < b { (a, b) } else { (b, a) }) {
            return Err(format!("{g}: repeated pair {a}/{b}"));
        }
        *counts.entry(a).or_default() += 1;
        *counts.entry(b).or_default() += 1;
        let ok_years = match g {
            GroupId::Earlier => p.first.year == 1775 && p.second.year == 1775,
            GroupId::Later => p.first.year == 1875 && p.second.year == 1875,
            GroupId::Compare => p.first.year != p.second.year,
        };
        if !ok_years {
            return Err(format!("{g}: pair {a}/{b} has years {} and {}", p.first.year, p.second.year));
        }
    }
    let max = counts.values().copied().max().unwrap_or(0);
    if max > if unique { 1 } else { 2 } {
        return Err(format!("{g}: a use appears {max} times"));
    }
    Ok(())
}

fn sampling_invariants() -> Verdict {
    let k = 20;
    let mut fallback_runs = 0;
    for seed in 0..200u64 {
        let mut sizes = StudyRng::from_seed(seed ^ 0xacce_0005);
        let reuse = seed % 2 == 0;
        let lo = if reuse { k } else { 2 * k };
        let (ne, nl) = (lo + sizes.below(41), lo + sizes.below(41));
        let (e, l) = (pool("e", ne, 1775), pool("l", nl, 1875));
        let config = SamplingConfig {
            pairs_per_group: k,
            seed,
            allow_reuse_twice: reuse,
        };
        let target = TargetSpec::new("Feder", Some("NN")).unwrap();
        let render = || {
            let mut rng = StudyRng::from_seed(seed);
            let pairs = build_study_pairs_with(&target, &e, &l, &config, "Feder", &mut rng).map_err(|e| e.to_string())?;
            let (task, key) = build_task(pairs.clone(), &mut rng).map_err(|e| e.to_string())?;
            Ok::<_, String>((pairs, task.to_csv_string(), key.to_csv_string()))
        };
        let (pairs, task, key) = match render() {
            Ok(r) => r,
            Err(e) => return Fail(format!("seed {seed}: {e}")),
        };
        fallback_runs += usize::from(ne < 2 * k || nl < 2 * k);
        for (g, unique) in [
            (GroupId::Earlier, ne >= 2 * k),
            (GroupId::Later, nl >= 2 * k),
            (GroupId::Compare, ne >= k && nl >= k),
        ] {
            if let Err(e) = check_group(&pairs, g, k, unique) {
                return Fail(format!("seed {seed}: {e}"));
            }
        }
        match render() {
            Ok((_, t2, k2)) if t2 == task && k2 == key => {}
            _ => return Fail(format!("seed {seed}: repeated run differs")),
        }
    }
    Pass(format!("200 seeds, k = {k}, {fallback_runs} runs on the reuse fallback, byte-identical reruns"))
}

// ---------------------------------------------------------------- service

struct Server {
    child: Child,
    _stdout: BufReader<ChildStdout>,
    base: String,
    tokens: HashMap<String, String>,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Server {
    fn start(out_dir: &Path, data_dir: &Path, study: Option<(&str, &str)>) -> Result<Server, String> {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_durel"));
        cmd.arg("--out-dir")
            .arg(out_dir)
            .args(["serve", "--addr", "127.0.0.1:0", "--data-dir"])
            .arg(data_dir);
        if let Some((id, roster)) = study {
            cmd.args(["--study", id, "--roster", roster]);
        }
        let mut child = cmd
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| e.to_string())?;
        let mut stdout = BufReader::new(child.stdout.take().expect("piped"));
        let mut tokens = HashMap::new();
        let mut line = String::new();
        loop {
            line.clear();
            if stdout.read_line(&mut line).map_err(|e| e.to_string())? == 0 {
                let _ = child.kill();
                return Err("server exited before listening".into());
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["token", a, t] => {
                    tokens.insert(a.to_string(), t.to_string());
                }
                ["listening", "on", url] => {
                    return Ok(Server {
                        child,
                        _stdout: stdout,
                        base: url.to_string(),
                        tokens,
                    })
                }
                _ => {}
            }
        }
    }

    /// SIGKILL, no chance to clean up.
    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

struct Http {
    client: reqwest::blocking::Client,
    base: String,
}

impl Http {
    fn new(base: &str) -> Self {
        Http {
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .expect("client"),
            base: base.to_owned(),
        }
    }

    fn get(&self, path: &str, token: Option<&str>) -> Result<(u16, String), String> {
        let mut req = self.client.get(format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        Ok((resp.status().as_u16(), resp.text().map_err(|e| e.to_string())?))
    }

    fn post(&self, path: &str, token: Option<&str>, body: &Value) -> Result<(u16, String), String> {
        let mut req = self.client.post(format!("{}{path}", self.base)).json(body);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        Ok((resp.status().as_u16(), resp.text().map_err(|e| e.to_string())?))
    }

    /// Asks for the next pair and judges it. Returns the bodies, or None when done.
    fn step(&self, study: &str, annotator: &str, token: &str, value: u8) -> Result<Option<(String, String, String)>, String> {
        let (s, next) = self.get(&format!("/studies/{study}/annotators/{annotator}/next"), Some(token))?;
        if s != 200 {
            return Err(format!("next: {s} {next}"));
        }
        let v: Value = serde_json::from_str(&next).map_err(|e| e.to_string())?;
        if v["status"] == "done" {
            return Ok(None);
        }
        let pair_id = v["pair"]["pair_id"].as_str().ok_or("next without pair_id")?.to_owned();
        let (s, ack) = self.post(
            &format!("/studies/{study}/annotators/{annotator}/judgments"),
            Some(token),
            &json!({"pair_id": pair_id, "value": value}),
        )?;
        if s != 200 {
            return Err(format!("submit: {s} {ack}"));
        }
        Ok(Some((pair_id, next, ack)))
    }
}

const LEMMAS: [&str; 22] = [
    "Abend", "Anker", "Bogen", "Brücke", "Eimer", "Feder", "Gabel", "Hafen", "Kammer", "Kette", "Krone", "Leiter",
    "Mantel", "Nadel", "Orgel", "Pfeife", "Rinde", "Schale", "Schloss", "Spiegel", "Tafel", "Zunge",
];

fn blinding() -> Verdict {
    match blinding_inner() {
        Ok(v) => v,
        Err(e) => Fail(e),
    }
}

fn blinding_inner() -> Result<Verdict, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let early = PeriodSpec::new("earlier", 1750, 1800).unwrap();
    let late = PeriodSpec::new("later", 1850, 1900).unwrap();
    let targets: Vec<SyntheticTarget> = LEMMAS
        .iter()
        .enumerate()
        .map(|(i, l)| match i % 3 {
            0 => SyntheticTarget::innovative(l),
            1 => SyntheticTarget::reductive(l),
            _ => SyntheticTarget::stable(l),
        })
        .collect();
    let syn = generate_corpus(&targets, &early, &late, 60, &mut StudyRng::from_seed(22));
    fs::write(dir.path().join("corpus.vrt"), syn.corpus.to_vertical()).map_err(|e| e.to_string())?;
    let mut config = "corpus = corpus.vrt\nearlier = 1750-1800\nlater = 1850-1900\npairs_per_group = 20\nseed = 20170601\nallow_reuse_twice = false\nout_dir = out\n".to_owned();
    for l in LEMMAS {
        config.push_str(&format!("target = {l} NN\n"));
    }
    fs::write(dir.path().join("study.conf"), config).map_err(|e| e.to_string())?;
    let o = Command::new(env!("CARGO_BIN_EXE_durel"))
        .current_dir(dir.path())
        .args(["--config", "study.conf", "sample"])
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("sample failed: {}", String::from_utf8_lossy(&o.stderr)));
    }

    let out = dir.path().join("out");
    let task_text = fs::read_to_string(out.join("task.csv")).map_err(|e| e.to_string())?;
    let key = TaskKey::read_csv(fs::File::open(out.join("key.csv")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let rows = task_text.lines().count() - 2;
    let periods = [early, late];
    let scan = |text: &str| {
        let mut v = blinding_violations(text, &key, &periods);
        v.extend(
            key.entries()
                .iter()
                .flat_map(|e| [&e.use1_id, &e.use2_id])
                .filter(|id| text.contains(id.as_str()))
                .cloned(),
        );
        v
    };
    let task_leaks = scan(&task_text);

    let server = Server::start(&out, &dir.path().join("studies"), Some(("blind", "rater")))?;
    let http = Http::new(&server.base);
    let token = server.tokens.get("rater").ok_or("no token printed")?.clone();
    let mut bodies = Vec::new();
    let mut first_pair = None;
    while let Some((pair, next, ack)) = http.step("blind", "rater", &token, 3)? {
        first_pair.get_or_insert(pair);
        bodies.push(next);
        bodies.push(ack);
    }
    let walked = bodies.len() / 2;
    bodies.push(http.get("/studies/blind/annotators/rater/next", Some(&token))?.1);
    let first_pair = first_pair.ok_or("no pairs served")?;
    let judgments = "/studies/blind/annotators/rater/judgments";
    bodies.push(http.post(judgments, Some(&token), &json!({"pair_id": first_pair, "value": 1}))?.1);
    bodies.push(http.post(judgments, Some(&token), &json!({"pair_id": "x-1", "value": 1}))?.1);
    bodies.push(http.post(judgments, Some(&token), &json!({"pair_id": first_pair, "value": 9}))?.1);
    bodies.push(http.get("/studies/blind/annotators/rater/next", None)?.1);
    let service_leaks: Vec<String> = bodies.iter().flat_map(|b| scan(b)).collect();
    server.kill();

    Ok(verdict(
        rows == 1320 && walked == 1320 && task_leaks.is_empty() && service_leaks.is_empty(),
        format!(
            "{rows} task rows, {} annotator responses scanned, leaks in task {:?}, in responses {:?}",
            bodies.len(),
            task_leaks,
            service_leaks.iter().take(5).collect::<Vec<_>>()
        ),
    ))
}

// ---------------------------------------------------------------- synthetic

fn synthetic_end_to_end() -> Verdict {
    let start = Instant::now();
    let early = PeriodSpec::new("earlier", 1750, 1800).unwrap();
    let late = PeriodSpec::new("later", 1850, 1900).unwrap();
    let targets = [
        SyntheticTarget::innovative("Anker"),
        SyntheticTarget::reductive("Bogen"),
        SyntheticTarget::stable("Eimer"),
    ];
    let expected = [ChangeClass::Innovative, ChangeClass::Reductive, ChangeClass::Stable];
    let annotators: Vec<String> = (1..=5).map(|i| i.to_string()).collect();
    let (mut classes_ok, mut signs_ok) = (0, 0);
    let mut failures = Vec::new();
    for seed in 0..100u64 {
        let mut rng = StudyRng::from_seed(seed);
        let syn = generate_corpus(&targets, &early, &late, 40, &mut rng);
        let config = SamplingConfig {
            pairs_per_group: 20,
            seed,
            allow_reuse_twice: true,
        };
        let mut pairs = Vec::new();
        for t in &targets {
            let e = extract_uses(&syn.corpus, &t.target, &early);
            let l = extract_uses(&syn.corpus, &t.target, &late);
            match build_study_pairs_with(&t.target, &e, &l, &config, &t.target.lemma, &mut rng) {
                Ok(p) => pairs.extend(p),
                Err(e) => return Fail(format!("seed {seed}: {e}")),
            }
        }
        let (_, key) = build_task(pairs, &mut rng).expect("unique ids");
        let judgments = simulate_judgments(&key, &syn.senses, &annotators, 0.05, &mut rng);
        let matrix = assemble_matrix(&judgments, &key, DuplicatePolicy::Reject).expect("valid judgments");
        let measures = all_measures(&matrix, &key, DEFAULT_THRESHOLD).expect("all groups present");
        let by_lemma = |l: &str| measures.iter().find(|m| m.target.lemma == l).expect("target measured");
        let classes: Vec<Option<ChangeClass>> = targets.iter().map(|t| by_lemma(&t.target.lemma).class).collect();
        if classes.iter().zip(&expected).all(|(c, e)| *c == Some(*e)) {
            classes_ok += 1;
        } else if failures.len() < 3 {
            failures.push(format!("seed {seed}: {classes:?}"));
        }
        let inn = by_lemma("Anker").delta_later.unwrap_or(0.0);
        let red = by_lemma("Bogen").delta_later.unwrap_or(0.0);
        signs_ok += usize::from(inn < 0.0 && red > 0.0);
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        classes_ok >= 95 && signs_ok >= 95 && secs < 30.0,
        format!(
            "classes right in {classes_ok}/100 seeds, signs right in {signs_ok}/100 (need 95), {secs:.2} s (limit 30 s){}",
            if failures.is_empty() { String::new() } else { format!(", e.g. {}", failures.join("; ")) }
        ),
    )
}

// ---------------------------------------------------------------- durability

fn durability() -> Verdict {
    match durability_inner() {
        Ok(v) => v,
        Err(e) => Fail(e),
    }
}

fn snapshot(http: &Http, study: &str) -> Result<(String, String), String> {
    let (s1, progress) = http.get(&format!("/studies/{study}/progress"), None)?;
    let (s2, export) = http.get(&format!("/studies/{study}/export"), None)?;
    if s1 != 200 || s2 != 200 {
        return Err(format!("snapshot: {s1} {progress} / {s2} {export}"));
    }
    Ok((progress, export))
}

fn durability_inner() -> Result<Verdict, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("out");
    let data = dir.path().join("studies");
    let early = PeriodSpec::new("earlier", 1750, 1800).unwrap();
    let late = PeriodSpec::new("later", 1850, 1900).unwrap();
    let targets = [SyntheticTarget::innovative("Anker"), SyntheticTarget::stable("Eimer")];
    let mut rng = StudyRng::from_seed(8);
    let syn = generate_corpus(&targets, &early, &late, 40, &mut rng);
    let config = SamplingConfig {
        pairs_per_group: 20,
        seed: 8,
        allow_reuse_twice: false,
    };
    let mut pairs = Vec::new();
    for t in &targets {
        let e = extract_uses(&syn.corpus, &t.target, &early);
        let l = extract_uses(&syn.corpus, &t.target, &late);
        pairs.extend(build_study_pairs_with(&t.target, &e, &l, &config, &t.target.lemma, &mut rng).map_err(|e| e.to_string())?);
    }
    let (task, key) = build_task(pairs, &mut rng).map_err(|e| e.to_string())?;
    fs::create_dir_all(&out).map_err(|e| e.to_string())?;
    fs::write(out.join("task.csv"), task.to_csv_string()).map_err(|e| e.to_string())?;
    fs::write(out.join("key.csv"), key.to_csv_string()).map_err(|e| e.to_string())?;
    let study = Some(("dur", "a,b"));

    // phase 1: acknowledged judgments, SIGKILL, torn tail, restart
    let s1 = Server::start(&out, &data, study)?;
    let tokens = s1.tokens.clone();
    let http = Http::new(&s1.base);
    for i in 0..25u8 {
        http.step("dur", "a", &tokens["a"], i % 5)?;
    }
    for _ in 0..10 {
        http.step("dur", "b", &tokens["b"], 2)?;
    }
    let before = snapshot(&http, "dur")?;
    let next_before = http.get("/studies/dur/annotators/a/next", Some(&tokens["a"]))?.1;
    s1.kill();
    let journal = data.join("dur/journal.jsonl");
    fs::OpenOptions::new()
        .append(true)
        .open(&journal)
        .and_then(|mut f| f.write_all(b"{\"annotator\":\"a\",\"pair_id\":\"An"))
        .map_err(|e| e.to_string())?;

    let s2 = Server::start(&out, &data, study)?;
    let http = Http::new(&s2.base);
    let after = snapshot(&http, "dur")?;
    let next_after = http.get("/studies/dur/annotators/a/next", Some(&tokens["a"]))?.1;
    let phase1 = before == after && next_before == next_after && s2.tokens == tokens;

    // phase 2: kill while a client is submitting
    let acked = Arc::new(Mutex::new(Vec::<String>::new()));
    let stop = Arc::new(AtomicBool::new(false));
    let writer = {
        let (acked, stop, base, token) = (acked.clone(), stop.clone(), s2.base.clone(), tokens["b"].clone());
        std::thread::spawn(move || {
            let http = Http::new(&base);
            while !stop.load(Ordering::SeqCst) {
                match http.step("dur", "b", &token, 4) {
                    Ok(Some((pair, _, _))) => acked.lock().unwrap().push(pair),
                    _ => break,
                }
            }
        })
    };
    let deadline = Instant::now() + Duration::from_secs(20);
    while acked.lock().unwrap().len() < 15 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(2));
    }
    s2.kill();
    stop.store(true, Ordering::SeqCst);
    let _ = writer.join();
    let acked = acked.lock().unwrap().clone();

    let s3 = Server::start(&out, &data, study)?;
    let replay1 = snapshot(&Http::new(&s3.base), "dur")?;
    s3.kill();
    let s4 = Server::start(&out, &data, study)?;
    let replay2 = snapshot(&Http::new(&s4.base), "dur")?;
    drop(s4);

    let b_lines: Vec<&str> = replay1
        .1
        .lines()
        .skip(1)
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1] == "b" && f[2] == "4").then_some(f[0])
        })
        .collect();
    let acked_kept = b_lines.len() >= acked.len() && b_lines[..acked.len()] == acked[..];
    let phase2 = acked_kept && b_lines.len() <= acked.len() + 1 && replay1 == replay2;

    Ok(verdict(
        phase1 && phase2,
        format!(
            "restart after SIGKILL + torn tail: progress/export identical {phase1}; kill during submission: {} acked, {} replayed, restarts identical {}",
            acked.len(),
            b_lines.len(),
            replay1 == replay2
        ),
    ))
}

// ---------------------------------------------------------------- main

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 8] = [
        ("spearman matches brute-force rank oracle", spearman_oracle),
        ("spearman matches classical formula on permutations", classical_formula),
        ("published agreement table reproduced", published_agreement),
        ("published change means reproduced", published_means),
        ("sampling invariants over 200 seeds", sampling_invariants),
        ("task file and annotator responses are blinded", blinding),
        ("synthetic study recovers change types", synthetic_end_to_end),
        ("service survives kill and restart", durability),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Fail(format!("panicked: {msg}"))
        });
        let (tag, detail) = match result {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Skip(d) => ("SKIP", d),
        };
        println!("{tag} [{}] {name}: {detail}", i + 1);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
