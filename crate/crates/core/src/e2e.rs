//! End-to-end answering with and without retrieved context, and the
//! four-way split of items by parametric correctness and retrieval coverage.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::evalkit::{ItemMetrics, RunRecord};
use crate::gateway::{estimate_tokens, ids, Gateway, GatewayError, Payload};
use crate::qgen::BenchmarkItem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    WithRetrieval,
    ParametricOnly,
}

/// One line of `e2e_judgments.jsonl`. `flagged` marks answers or verdicts lost
/// to a gateway error; those count as incorrect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2EJudgment {
    pub item_id: String,
    pub mode: Mode,
    pub answer: String,
    pub correct: bool,
    pub retriever_id: Option<String>,
    #[serde(default)]
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct E2eConfig {
    pub k: usize,
    pub context_budget: usize,
}

impl Default for E2eConfig {
    fn default() -> Self {
        Self { k: 10, context_budget: 6000 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum E2eError {
    #[error("no {mode:?} judgment for item {item_id}")]
    MissingJudgment { item_id: String, mode: Mode },
    #[error("no items to decompose")]
    Empty,
}

/// Joins ranked chunks with `[rank] chunk_id` headers, dropping the lowest
/// ranked ones until the text fits `budget` tokens.
pub fn format_context(ranked: &[(&str, &str)], budget: usize) -> String {
    let blocks: Vec<String> = ranked.iter().enumerate().map(|(i, (id, text))| format!("[{}] {id}\n{text}", i + 1)).collect();
    let mut keep = blocks.len();
    loop {
        let joined = blocks[..keep].join("\n\n");
        if keep == 0 || estimate_tokens(&joined) as usize <= budget {
            return joined;
        }
        keep -= 1;
    }
}

pub fn answer(gw: &Gateway, question: &str, context: Option<&str>) -> Result<String, GatewayError> {
    let payload: Payload =
        [("question".to_string(), json!(question)), ("context".to_string(), json!(context.unwrap_or("")))].into();
    gw.generate_field(ids::E2E_ANSWER, &payload, "answer")
}

pub fn judge_correct(gw: &Gateway, answer: &str, reference: &str, question: &str) -> Result<bool, GatewayError> {
    let payload: Payload = [
        ("question".to_string(), json!(question)),
        ("reference".to_string(), json!(reference)),
        ("answer".to_string(), json!(answer)),
    ]
    .into();
    Ok(gw.judge(ids::E2E_JUDGE, &payload)?.passed())
}

fn judged(gw: &Gateway, item: &BenchmarkItem, mode: Mode, context: Option<&str>, retriever_id: Option<&str>) -> E2EJudgment {
    let mut out = E2EJudgment {
        item_id: item.item_id.clone(),
        mode,
        answer: String::new(),
        correct: false,
        retriever_id: retriever_id.map(str::to_string),
        flagged: false,
    };
    match answer(gw, &item.question, context) {
        Ok(a) => out.answer = a,
        Err(e) => {
            tracing::warn!(item = %item.item_id, "unanswered: {e}");
            out.flagged = true;
            return out;
        }
    }
    match judge_correct(gw, &out.answer, &item.answer, &item.question) {
        Ok(c) => out.correct = c,
        Err(e) => {
            tracing::warn!(item = %item.item_id, "judge failed: {e}");
            out.flagged = true;
        }
    }
    out
}

/// One parametric judgment per item plus one with-retrieval judgment per
/// (item, retriever) found in `runs`.
pub fn run_e2e(
    gw: &Gateway,
    items: &[BenchmarkItem],
    runs: &[RunRecord],
    chunk_text: &HashMap<&str, &str>,
    config: &E2eConfig,
) -> Vec<E2EJudgment> {
    let by_item: HashMap<&str, &BenchmarkItem> = items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    let mut out: Vec<E2EJudgment> = items.par_iter().map(|it| judged(gw, it, Mode::ParametricOnly, None, None)).collect();
    let retrieved: Vec<E2EJudgment> = runs
        .par_iter()
        .filter_map(|run| {
            let item = by_item.get(run.item_id.as_str())?;
            let ranked: Vec<(&str, &str)> = run
                .ranking
                .iter()
                .take(config.k)
                .filter_map(|id| chunk_text.get(id.as_str()).map(|t| (id.as_str(), *t)))
                .collect();
            let context = format_context(&ranked, config.context_budget);
            Some(judged(gw, item, Mode::WithRetrieval, Some(&context), Some(&run.retriever_id)))
        })
        .collect();
    out.extend(retrieved);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cell {
    Intersection,
    RetrievalOnly,
    ParametricOnly,
    Complementary,
}

impl Cell {
    pub const ALL: [Cell; 4] = [Cell::Intersection, Cell::RetrievalOnly, Cell::ParametricOnly, Cell::Complementary];

    pub fn of(param_correct: bool, perfect_retrieval: bool) -> Cell {
        match (param_correct, perfect_retrieval) {
            (true, true) => Cell::Intersection,
            (false, true) => Cell::RetrievalOnly,
            (true, false) => Cell::ParametricOnly,
            (false, false) => Cell::Complementary,
        }
    }
}

/// `share_bp` is in basis points; the four cells always sum to 10000.
/// `accuracy` is the with-retrieval accuracy in percent, absent for an
/// empty cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub cell: Cell,
    pub count: usize,
    pub share_bp: u32,
    pub accuracy: Option<f64>,
}

impl CoverageCell {
    pub fn share(&self) -> f64 {
        f64::from(self.share_bp) / 100.0
    }
}

/// Largest-remainder apportionment of 10000 basis points. Ties go to the
/// earlier index.
pub fn basis_points(counts: &[usize]) -> Vec<u32> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut bp: Vec<u32> = counts.iter().map(|c| (c * 10_000 / total) as u32).collect();
    let mut rem: Vec<(usize, usize)> = counts.iter().enumerate().map(|(i, c)| (c * 10_000 % total, i)).collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = 10_000 - bp.iter().sum::<u32>();
    for &(_, i) in rem.iter().take(short as usize) {
        bp[i] += 1;
    }
    bp
}

/// Accuracies in percent. RAG gain is E2E minus parametric-only accuracy;
/// parametric gain is E2E minus mean PerfRecall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSummary {
    pub e2e: f64,
    pub param_only: f64,
    pub perfrecall: f64,
    pub rag_gain: f64,
    pub parametric_gain: f64,
}

impl GainSummary {
    pub fn from_accuracies(e2e: f64, param_only: f64, perfrecall: f64) -> Self {
        Self { e2e, param_only, perfrecall, rag_gain: e2e - param_only, parametric_gain: e2e - perfrecall }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub retriever_id: String,
    pub domain: String,
    pub items: usize,
    pub flagged: usize,
    pub gains: GainSummary,
    pub cells: Vec<CoverageCell>,
}

/// Splits the items in `perfrecall` (item id to 0/1) into the four cells for
/// one retriever.
pub fn decompose(
    judgments: &[E2EJudgment],
    perfrecall: &BTreeMap<String, f64>,
    retriever_id: &str,
    domain: &str,
) -> Result<Decomposition, E2eError> {
    if perfrecall.is_empty() {
        return Err(E2eError::Empty);
    }
    let mut param: HashMap<&str, &E2EJudgment> = HashMap::new();
    let mut retr: HashMap<&str, &E2EJudgment> = HashMap::new();
    for j in judgments {
        match j.mode {
            Mode::ParametricOnly => {
                param.insert(&j.item_id, j);
            }
            Mode::WithRetrieval if j.retriever_id.as_deref() == Some(retriever_id) => {
                retr.insert(&j.item_id, j);
            }
            Mode::WithRetrieval => {}
        }
    }
    let mut counts = [0usize; 4];
    let mut correct = [0usize; 4];
    let (mut e2e, mut par, mut pr, mut flagged) = (0usize, 0usize, 0.0f64, 0usize);
    for (item_id, &p) in perfrecall {
        let missing = |mode| E2eError::MissingJudgment { item_id: item_id.clone(), mode };
        let pj = param.get(item_id.as_str()).ok_or_else(|| missing(Mode::ParametricOnly))?;
        let rj = retr.get(item_id.as_str()).ok_or_else(|| missing(Mode::WithRetrieval))?;
        let cell = Cell::of(pj.correct, p >= 1.0) as usize;
        counts[cell] += 1;
        correct[cell] += usize::from(rj.correct);
        e2e += usize::from(rj.correct);
        par += usize::from(pj.correct);
        pr += p;
        flagged += usize::from(pj.flagged || rj.flagged);
    }
    let n = perfrecall.len() as f64;
    let bp = basis_points(&counts);
    let cells = Cell::ALL
        .iter()
        .enumerate()
        .map(|(i, &cell)| CoverageCell {
            cell,
            count: counts[i],
            share_bp: bp[i],
            accuracy: (counts[i] > 0).then(|| 100.0 * correct[i] as f64 / counts[i] as f64),
        })
        .collect();
    Ok(Decomposition {
        retriever_id: retriever_id.to_string(),
        domain: domain.to_string(),
        items: perfrecall.len(),
        flagged,
        gains: GainSummary::from_accuracies(100.0 * e2e as f64 / n, 100.0 * par as f64 / n, 100.0 * pr / n),
        cells,
    })
}

/// Contents of `e2e_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eReport {
    pub k: usize,
    pub rows: Vec<Decomposition>,
}

impl E2eReport {
    pub fn row(&self, retriever: &str, domain: &str) -> Option<&Decomposition> {
        self.rows.iter().find(|r| r.retriever_id == retriever && r.domain == domain)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "retriever\tdomain\titems\tE2E\tParamOnly\tPerfRecall\tRAGGain\tParametricGain\tIntersection\tRetrievalOnly\tParametricOnly\tComplementary\n",
        );
        for r in &self.rows {
            let g = r.gains;
            let shares: Vec<String> = r.cells.iter().map(|c| format!("{:.2}", c.share())).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.2}\t{:.2}\t{:.2}\t{:+.2}\t{:+.2}\t{}\n",
                r.retriever_id,
                r.domain,
                r.items,
                g.e2e,
                g.param_only,
                g.perfrecall,
                g.rag_gain,
                g.parametric_gain,
                shares.join("\t")
            ));
        }
        out
    }
}

/// Per (retriever, domain) and per retriever over all domains, with
/// PerfRecall taken from the retrieval metrics at the same cutoff.
pub fn e2e_report(judgments: &[E2EJudgment], metrics: &[ItemMetrics], k: usize) -> Result<E2eReport, E2eError> {
    let mut slices: BTreeMap<(String, String), BTreeMap<String, f64>> = BTreeMap::new();
    for m in metrics {
        for d in [m.domain_tag.as_str(), "all"] {
            slices.entry((m.retriever_id.clone(), d.to_string())).or_default().insert(m.item_id.clone(), m.scores.perfrecall);
        }
    }
    let rows = slices
        .iter()
        .map(|((r, d), pr)| decompose(judgments, pr, r, d))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(E2eReport { k, rows })
}
