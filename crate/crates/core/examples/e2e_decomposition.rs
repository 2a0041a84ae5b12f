//! Answering with and without retrieved context, and the split of items by
//! parametric correctness and perfect retrieval.

use std::collections::BTreeMap;

use redbench::e2e::{decompose, E2EJudgment, GainSummary, Mode};

fn main() {
    // (param-only correct, with-retrieval correct, perfect retrieval)
    let rows = [
        (true, true, true),
        (true, true, false),
        (false, true, true),
        (false, false, true),
        (false, false, false),
        (true, false, false),
        (false, true, true),
    ];
    let mut judgments = Vec::new();
    let mut perfrecall = BTreeMap::new();
    for (i, (param, rag, perfect)) in rows.iter().enumerate() {
        let id = format!("q{i}");
        for (mode, correct) in [(Mode::ParametricOnly, *param), (Mode::WithRetrieval, *rag)] {
            judgments.push(E2EJudgment {
                item_id: id.clone(),
                mode,
                answer: String::new(),
                correct,
                retriever_id: (mode == Mode::WithRetrieval).then(|| "bm25".to_string()),
                flagged: false,
            });
        }
        perfrecall.insert(id, if *perfect { 1.0 } else { 0.0 });
    }
    let d = decompose(&judgments, &perfrecall, "bm25", "demo").expect("complete judgments");
    println!("E2E {:.2}  param-only {:.2}  PerfRecall {:.2}", d.gains.e2e, d.gains.param_only, d.gains.perfrecall);
    println!("RAG gain {:+.2}  parametric gain {:+.2}", d.gains.rag_gain, d.gains.parametric_gain);
    for c in &d.cells {
        let acc = c.accuracy.map_or_else(|| "-".to_string(), |a| format!("{a:.1}%"));
        println!("  {:<15} {:>2} items  {:>6.2}%  accuracy {acc}", format!("{:?}", c.cell), c.count, c.share());
    }

    for (domain, e2e, param, pr) in [("General-Wiki", 80.81, 73.69, 80.88), ("Legal", 45.82, 26.12, 34.84)] {
        let g = GainSummary::from_accuracies(e2e, param, pr);
        println!("{domain:<13} RAG gain {:+.2}  parametric gain {:+.2}", g.rag_gain, g.parametric_gain);
    }
}
