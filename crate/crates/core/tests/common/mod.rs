//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use persona::data::{Dataset, ProfileEntry, TaskId, UserRecord};
use persona::lora::{AdaptedModel, LoraWeights, ToyModel};

pub fn golden_path(task: TaskId) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data/golden")
        .join(format!("{}.txt", task.slug()))
}

/// Two-entry fixture and input per task, matching the golden files.
pub fn template_fixture(task: TaskId) -> (Vec<ProfileEntry>, String) {
    let e = |id: &str, fields: &[(&str, &str)]| ProfileEntry::new(id, fields.iter().copied());
    match task {
        TaskId::Lamp1 => (
            vec![
                e("p1", &[("title", "Graph kernels revisited"), ("abstract", "We revisit kernels.")]),
                e("p2", &[("title", "Sparse codes"), ("abstract", "Codes that are sparse.")]),
            ],
            "For an author who has written the paper with the title \"Deep nets for graphs\", which reference is \
             related? Just answer with [1] or [2] without explanation. [1]: \"Message passing networks\" [2]: \
             \"Fish farming at scale\""
                .into(),
        ),
        TaskId::Lamp2 => (
            vec![
                e("m1", &[("description", "A heist on a space station"), ("tag", "sci-fi")]),
                e("m2", &[("description", "Two friends on a road trip"), ("tag", "comedy")]),
            ],
            "Which tag does this movie relate to among the following tags? Just answer with the tag name without \
             further explanation. tags: [sci-fi, based on a book, comedy, action, twist ending, dystopia, dark \
             comedy, classic, psychology, fantasy, romance, thought-provoking, social commentary, violence, true \
             story] description: A robot learns to paint"
                .into(),
        ),
        TaskId::Lamp3 => (
            vec![
                e("r1", &[("text", "Works as advertised"), ("score", "5")]),
                e("r2", &[("text", "Broke after a week"), ("score", "2")]),
            ],
            "What is the score of the following review on a scale of 1 to 5? just answer with 1, 2, 3, 4, or 5 \
             without further explanation. review: Decent value for the price"
                .into(),
        ),
        TaskId::Lamp4 => (
            vec![
                e("n1", &[("text", "Heavy rain and wind battered the coast overnight"), ("title", "Storm hits coast")]),
                e("n2", &[("text", "Stocks rose sharply on Monday"), ("title", "Markets rally")]),
            ],
            "Generate a headline for the following article: The city council approved a new park downtown".into(),
        ),
        TaskId::Lamp5 => (
            vec![
                e("a1", &[("abstract", "We present a solver for sparse systems"), ("title", "Fast sparse solvers")]),
                e("a2", &[("abstract", "We study greedy coloring bounds"), ("title", "On graph coloring")]),
            ],
            "Generate a title for the following abstract of a paper: We propose a method for learning user adapters"
                .into(),
        ),
        TaskId::Lamp6 => (
            vec![
                e("e1", &[("text", "Are you free for lunch on Friday?"), ("title", "Lunch on Friday")]),
                e("e2", &[("text", "Please find the report attached"), ("title", "Quarterly report")]),
            ],
            "Generate a subject for the following email: The meeting moved to Tuesday at noon".into(),
        ),
        TaskId::Lamp7 => (
            vec![e("t1", &[("text", "Coffee first, then code")]), e("t2", &[("text", "Rainy days are for reading")])],
            "Paraphrase the following tweet without any explanation before or after it: Monday again and the kettle \
             is broken"
                .into(),
        ),
    }
}

fn lexical_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_ascii_lowercase)
        .collect()
}

/// Brute-force Okapi BM25 (k1 1.5, b 0.75) with negative IDFs replaced by
/// 0.25 times the mean IDF over the vocabulary.
pub fn bm25_oracle(docs: &[String], query: &str) -> Vec<f64> {
    let (k1, b, eps) = (1.5, 0.75, 0.25);
    let toks: Vec<Vec<String>> = docs.iter().map(|d| lexical_tokens(d)).collect();
    let n = docs.len() as f64;
    let avg = toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut vocab: Vec<&String> = toks.iter().flatten().collect();
    vocab.sort();
    vocab.dedup();
    let raw_idf = |term: &str| {
        let df = toks.iter().filter(|t| t.iter().any(|w| w == term)).count() as f64;
        ((n - df + 0.5) / (df + 0.5)).ln()
    };
    let mean_idf = vocab.iter().map(|t| raw_idf(t)).sum::<f64>() / vocab.len() as f64;
    let mut scores = vec![0.0; docs.len()];
    for q in lexical_tokens(query) {
        if !vocab.iter().any(|t| **t == q) {
            continue;
        }
        let idf = match raw_idf(&q) {
            v if v < 0.0 => eps * mean_idf,
            v => v,
        };
        for (i, t) in toks.iter().enumerate() {
            let tf = t.iter().filter(|w| **w == q).count() as f64;
            if tf > 0.0 {
                scores[i] +=
                    idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * t.len() as f64 / avg));
            }
        }
    }
    scores
}

/// Indices of the `k` best scores; ties keep the lower index first.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Largest relative disagreement between analytic LoRA gradients and
/// central finite differences over every A and B entry.
pub fn max_gradient_error(
    base: &ToyModel,
    w: &LoraWeights,
    src: &[u32],
    tgt: &[u32],
) -> (f64, usize) {
    let (_, grads) = AdaptedModel::from_weights(base, w.clone()).loss_and_grads(src, tgt, None);
    let h = 1e-5;
    let loss_at = |w: LoraWeights| AdaptedModel::from_weights(base, w).loss(src, tgt);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (site, g) in &grads {
        for which in 0..2 {
            let analytic = if which == 0 { &g.a } else { &g.b };
            for ((r, c), &an) in analytic.indexed_iter() {
                let nudge = |delta: f64| {
                    let mut v = w.clone();
                    let p = v.sites.get_mut(site).unwrap();
                    let m = if which == 0 { &mut p.a } else { &mut p.b };
                    m[[r, c]] += delta;
                    v
                };
                let fd = (loss_at(nudge(h)) - loss_at(nudge(-h))) / (2.0 * h);
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    (worst, checked)
}

/// A dataset of `users` users built from per-user style-marker profiles.
pub fn marker_dataset(users: usize, entries: usize) -> Dataset {
    let records: Vec<UserRecord> = (0..users)
        .map(|i| {
            let marker = format!("mark{}", (b'a' + (i % 26) as u8) as char);
            persona::synthetic::style_marker_user(
                &format!("user{i:02}"),
                entries,
                6,
                &marker,
                i as u64,
            )
        })
        .collect();
    Dataset {
        task: TaskId::Lamp4,
        records,
    }
}

/// Scripted HTTP responses: `(status, body)` served in order, the last one
/// repeated.
pub struct StubServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    pub bodies: Arc<std::sync::Mutex<Vec<String>>>,
    _thread: JoinHandle<()>,
}

impl StubServer {
    pub fn start(responses: Vec<(u16, String)>) -> StubServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/generate", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(std::sync::Mutex::new(Vec::new()));
        let (h, bs) = (hits.clone(), bodies.clone());
        let thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
                let mut body = vec![0u8; len];
                let _ = reader.read_exact(&mut body);
                bs.lock()
                    .unwrap()
                    .push(String::from_utf8_lossy(&body).into_owned());
                let i = h.fetch_add(1, Ordering::SeqCst);
                let (status, text) = responses[i.min(responses.len() - 1)].clone();
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        StubServer {
            url,
            hits,
            bodies,
            _thread: thread,
        }
    }
}

/// Hand-verified metric cases: `(metric, predictions, golds, expected)`.
pub fn metric_table() -> Vec<(&'static str, Vec<&'static str>, Vec<&'static str>, f64)> {
    vec![
        ("rouge-1", vec!["the cat"], vec!["the cat sat"], 0.8),
        ("rouge-1", vec!["the cat sat"], vec!["the cat sat"], 1.0),
        ("rouge-1", vec!["dog"], vec!["the cat sat"], 0.0),
        ("rouge-1", vec!["the the the"], vec!["the cat"], 0.4),
        ("rouge-1", vec!["cat the"], vec!["the cat"], 1.0),
        (
            "rouge-1",
            vec!["A quick brown fox"],
            vec!["the quick brown dog"],
            0.5,
        ),
        ("rouge-1", vec!["The CAT, sat!"], vec!["the cat sat"], 1.0),
        ("rouge-1", vec![""], vec!["x"], 0.0),
        ("rouge-l", vec!["cat the"], vec!["the cat"], 0.5),
        ("rouge-l", vec!["the cat"], vec!["the cat sat"], 0.8),
        ("rouge-l", vec!["a b c d"], vec!["a c b d"], 0.75),
        ("rouge-l", vec!["x y z"], vec!["a b c"], 0.0),
        (
            "rouge-l",
            vec!["police kill the gunman"],
            vec!["police killed the gunman"],
            0.75,
        ),
        (
            "rouge-1",
            vec!["police kill the gunman"],
            vec!["police killed the gunman"],
            0.75,
        ),
        ("rouge-l", vec!["a a b"], vec!["a b b"], 2.0 / 3.0),
        (
            "accuracy",
            vec!["comedy", "action", "sci-fi"],
            vec!["comedy", "comedy", "sci-fi"],
            2.0 / 3.0,
        ),
        ("accuracy", vec![" Comedy "], vec!["comedy"], 1.0),
        (
            "accuracy",
            vec!["[1]", "[2]", "[1]", "[1]"],
            vec!["[1]", "[1]", "[1]", "[2]"],
            0.5,
        ),
        (
            "f1:[1]|[2]",
            vec!["[1]", "[2]", "[1]", "[1]"],
            vec!["[1]", "[1]", "[1]", "[2]"],
            1.0 / 3.0,
        ),
        ("f1:a|b", vec!["a", "b"], vec!["a", "b"], 1.0),
        (
            "f1:a|b|c",
            vec!["a", "a", "b"],
            vec!["a", "b", "b"],
            4.0 / 9.0,
        ),
        ("f1:a|b", vec!["z", "b"], vec!["a", "b"], 0.5),
        ("mae", vec!["1", "3"], vec!["2", "1"], 1.5),
        ("rmse", vec!["1", "3"], vec!["2", "1"], 1.5811388300841898),
        ("mae", vec!["5", "5", "5"], vec!["5", "4", "1"], 5.0 / 3.0),
        (
            "rmse",
            vec!["5", "5", "5"],
            vec!["5", "4", "1"],
            2.3804761428476167,
        ),
        ("mae", vec!["2"], vec!["2"], 0.0),
        ("rmse", vec!["2"], vec!["2"], 0.0),
        ("mae", vec!["great"], vec!["5"], 2.0),
        (
            "rmse",
            vec!["1", "2", "3", "4"],
            vec!["4", "3", "2", "1"],
            2.23606797749979,
        ),
    ]
}

/// Evaluates one row of [`metric_table`] through the library.
pub fn evaluate_metric_row(metric: &str, preds: &[&str], golds: &[&str]) -> f64 {
    use persona::metrics::{accuracy, macro_f1, mae_rmse, mean_rouge, parse_rating, RougeVariant};
    let ratings = |xs: &[&str]| xs.iter().map(|x| parse_rating(x)).collect::<Vec<_>>();
    match metric {
        "rouge-1" => {
            mean_rouge(preds, golds, RougeVariant::Rouge1)
                .unwrap()
                .value
        }
        "rouge-l" => {
            mean_rouge(preds, golds, RougeVariant::RougeL)
                .unwrap()
                .value
        }
        "accuracy" => accuracy(preds, golds).unwrap().value,
        "mae" => mae_rmse(&ratings(preds), &ratings(golds)).unwrap().0.value,
        "rmse" => mae_rmse(&ratings(preds), &ratings(golds)).unwrap().1.value,
        f1 => {
            let labels: Vec<&str> = f1.strip_prefix("f1:").unwrap().split('|').collect();
            macro_f1(preds, golds, &labels).unwrap().value
        }
    }
}
