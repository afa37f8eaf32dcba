//! Length-normalized beam search over any next-token scorer.

/// Source of next-token log-probabilities.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    fn eos(&self) -> u32;
    /// Log-probabilities over `0..vocab_size()` after `prefix`.
    fn log_probs(&self, prefix: &[u32]) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, EOS excluded.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    /// Decoding steps taken, counting a final EOS.
    pub steps: usize,
    pub finished: bool,
}

impl Hypothesis {
    /// `log_prob / steps^exponent`.
    pub fn score(&self, exponent: f64) -> f64 {
        if self.steps == 0 {
            return 0.0;
        }
        self.log_prob / (self.steps as f64).powf(exponent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub beam: usize,
    pub max_steps: usize,
    pub length_penalty: f64,
}

impl BeamConfig {
    pub fn new(beam: usize, max_steps: usize) -> BeamConfig {
        BeamConfig {
            beam,
            max_steps,
            length_penalty: 1.0,
        }
    }
}

fn better(a: &Hypothesis, b: &Hypothesis, exponent: f64) -> bool {
    let (sa, sb) = (a.score(exponent), b.score(exponent));
    sa > sb || (sa == sb && a.tokens < b.tokens)
}

/// Beam search. Each step expands every live hypothesis, keeps the `beam`
/// best expansions by cumulative log-probability (ties: earlier parent,
/// then lower token id), and retires EOS expansions as finished. The
/// result is the finished or length-capped hypothesis with the best
/// length-normalized score.
pub fn beam_search<S: StepScorer + ?Sized>(scorer: &S, cfg: BeamConfig) -> Hypothesis {
    let beam = cfg.beam.max(1);
    let eos = scorer.eos();
    let mut alive = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        steps: 0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 1..=cfg.max_steps {
        let mut cands: Vec<(f64, usize, u32)> =
            Vec::with_capacity(alive.len() * scorer.vocab_size());
        for (pi, h) in alive.iter().enumerate() {
            for (tok, lp) in scorer.log_probs(&h.tokens).into_iter().enumerate() {
                if lp > f64::NEG_INFINITY {
                    cands.push((h.log_prob + lp, pi, tok as u32));
                }
            }
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut next = Vec::with_capacity(beam);
        for (lp, pi, tok) in cands.into_iter().take(beam) {
            let parent = &alive[pi];
            if tok == eos {
                finished.push(Hypothesis {
                    tokens: parent.tokens.clone(),
                    log_prob: lp,
                    steps: step,
                    finished: true,
                });
            } else {
                let mut tokens = parent.tokens.clone();
                tokens.push(tok);
                next.push(Hypothesis {
                    tokens,
                    log_prob: lp,
                    steps: step,
                    finished: false,
                });
            }
        }
        alive = next;
        if alive.is_empty() {
            break;
        }
        // Log-probabilities only fall, so a live hypothesis can at best
        // reach its current log-prob spread over the maximum length.
        if let Some(best) = finished
            .iter()
            .map(|h| h.score(cfg.length_penalty))
            .reduce(f64::max)
        {
            let bound = alive
                .iter()
                .map(|h| h.log_prob / (cfg.max_steps as f64).powf(cfg.length_penalty))
                .fold(f64::NEG_INFINITY, f64::max);
            if best > bound {
                alive.clear();
                break;
            }
        }
    }
    finished
        .into_iter()
        .chain(alive)
        .reduce(|best, h| {
            if better(&h, &best, cfg.length_penalty) {
                h
            } else {
                best
            }
        })
        .unwrap_or(Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            steps: 0,
            finished: false,
        })
}

/// Argmax rollout, ties to the lowest token id.
pub fn greedy<S: StepScorer + ?Sized>(scorer: &S, max_steps: usize) -> Hypothesis {
    let mut h = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        steps: 0,
        finished: false,
    };
    while h.steps < max_steps {
        let lps = scorer.log_probs(&h.tokens);
        let (tok, lp) =
            lps.iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                });
        h.log_prob += lp;
        h.steps += 1;
        if tok as u32 == scorer.eos() {
            h.finished = true;
            break;
        }
        h.tokens.push(tok as u32);
    }
    h
}
