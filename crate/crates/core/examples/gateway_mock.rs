//! The model gateway over the deterministic offline backend: judgments,
//! per-criterion rankings, embeddings and the cost ledger.

use redbench::gateway::{ids, Gateway, Payload};
use serde_json::json;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gw = Gateway::mock(42);

    let payload: Payload = [
        ("question".to_string(), json!("What does radium emit?")),
        ("reference".to_string(), json!("Radium emits alpha particles.")),
        ("answer".to_string(), json!("It emits alpha particles, says the text: radium emits alpha particles.")),
    ]
    .into();
    let v = gw.judge(ids::E2E_JUDGE, &payload)?;
    println!("e2e judge: {:?} ({})", v.outcome, v.rationale);

    let cands = vec![
        ("s1".to_string(), "It was very popular.".to_string()),
        ("s2".to_string(), "Apollo 11 landed on the Moon on 20 July 1969.".to_string()),
        ("s3".to_string(), "See page 12 for details.".to_string()),
    ];
    for criterion in ["specificity", "clarity"] {
        let out = gw.rank_by_criterion(&format!("rank_atom_{criterion}"), criterion, &cands)?;
        println!("{criterion:<12} {:?}", out.ranking.order);
    }

    let texts = vec!["Radium emits alpha particles.".to_string(), "Radium emits alpha radiation.".to_string()];
    let e = gw.embed(&texts, &gw.models().embedding)?;
    println!("cosine of two near-paraphrases: {:.3}", e[0].cosine(&e[1]));

    let costs = gw.cost_report();
    println!("{} calls, {} prompt tokens", costs.total.calls, costs.total.prompt_tokens);
    Ok(())
}
