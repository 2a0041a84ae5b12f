//! Synthetic corpora and instances used by tests, examples and the CLI's
//! demo commands.

use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::crrf::ablation::{AblationInstance, Candidate};
use crate::crrf::{ranking_from_scores, RankingSet};

/// A small multi-document corpus with cross-document repetition.
pub fn toy_corpus() -> Vec<(String, String)> {
    let docs: [(&str, &str); 6] = [
        (
            "curie.txt",
            "Marie Curie was born in Warsaw in 1867. Marie Curie moved to Paris in 1891 to study physics. \
             She shared the Nobel Prize in Physics in 1903. Marie Curie discovered polonium and radium with Pierre Curie. \
             The University of Paris appointed Marie Curie as its first female professor in 1906.",
        ),
        (
            "sorbonne.txt",
            "The University of Paris was founded around 1150. The Sorbonne college was established by Robert de Sorbon in 1257. \
             The University of Paris appointed Marie Curie as its first female professor in 1906. \
             Page 4 of the document lists the faculty.",
        ),
        (
            "radium.txt",
            "Radium was discovered by Marie Curie and Pierre Curie in 1898. Radium emits alpha particles and gamma radiation. \
             The Radium Institute opened in Paris in 1914. Marie Curie discovered polonium and radium with Pierre Curie.",
        ),
        (
            "danube.txt",
            "The Danube River flows through Vienna, Budapest and Belgrade. The Danube River empties into the Black Sea in Romania. \
             Vienna hosted the Congress of Vienna from 1814 to 1815. It is very long.",
        ),
        (
            "vienna.txt",
            "Wolfgang Amadeus Mozart moved to Vienna in 1781. Mozart composed The Magic Flute in 1791 for a Vienna theater. \
             Vienna hosted the Congress of Vienna from 1814 to 1815. Beethoven premiered his Ninth Symphony in Vienna in 1824.",
        ),
        (
            "budapest.txt",
            "Budapest was formed in 1873 by uniting Buda, Obuda and Pest. The Hungarian Parliament Building in Budapest was completed in 1904. \
             The Danube River flows through Vienna, Budapest and Belgrade.",
        ),
    ];
    docs.iter().map(|(n, t)| (n.to_string(), t.to_string())).collect()
}

/// Writes `(file name, text)` pairs into `dir`.
pub fn write_corpus(dir: &Path, docs: &[(String, String)]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for (name, text) in docs {
        fs::write(dir.join(name), text)?;
    }
    Ok(())
}

const FIRST: [&str; 10] = ["Amelia", "Bruno", "Clara", "Dmitri", "Elena", "Farid", "Greta", "Hugo", "Ingrid", "Jonas"];
const LAST: [&str; 8] = ["Abernathy", "Bergstrom", "Castellano", "Delacroix", "Esterhazy", "Fairweather", "Gallagher", "Halvorsen"];
const CITY: [&str; 10] = ["Lisbon", "Krakow", "Porto", "Turin", "Ghent", "Utrecht", "Bergen", "Seville", "Graz", "Tartu"];
const ORG: [&str; 8] = ["observatory", "shipyard", "conservatory", "botanical garden", "printing house", "glassworks", "brewery", "archive"];

fn planted_sentence(i: usize) -> String {
    format!(
        "{} {} founded the {} in {} during {}.",
        FIRST[i % 10],
        LAST[i / 10],
        ORG[(i * 3) % 8],
        CITY[(i * 7) % 10],
        1801 + i
    )
}

/// Number of documents in [`planted_corpus`] and how many of them share their
/// sentence with exactly one other document.
pub const PLANTED_DOCS: usize = 100;
pub const PLANTED_REDUNDANT: usize = 40;

/// 100 single-sentence documents. Documents `2p` and `2p + 1` for `p < 20`
/// repeat the same sentence verbatim; the other 60 sentences are unique.
/// Every sentence is one chunk and one atom, so 40 of 100 targets have an
/// equivalent in another chunk.
pub fn planted_corpus() -> Vec<(String, String)> {
    let pairs = PLANTED_REDUNDANT / 2;
    (0..PLANTED_DOCS)
        .map(|d| {
            let sentence = if d < PLANTED_REDUNDANT { planted_sentence(d / 2) } else { planted_sentence(d - pairs) };
            (format!("planted-{d:03}.txt"), sentence)
        })
        .collect()
}

/// Five documents for checking BM25 by hand. Only document 2 contains
/// "zeppelin".
pub fn bm25_toy() -> Vec<(String, String)> {
    [
        "river boats carry grain along the river",
        "mountain goats climb steep rocky slopes",
        "a zeppelin floated above the harbour town",
        "harbour cranes load grain onto ships",
        "steep streets wind through the old town",
    ]
    .iter()
    .enumerate()
    .map(|(i, t)| (format!("d{i}"), t.to_string()))
    .collect()
}

/// A two-candidate instance where a strictly increasing transform of one
/// criterion's raw scores flips the Base order but not the RRF order.
/// Returns the set before and after the transform `y -> 10y` on criterion `y`.
pub fn monotone_counterexample() -> (RankingSet, RankingSet) {
    let ids = vec!["a".to_string(), "b".to_string()];
    let x = ranking_from_scores("x", &[("a".into(), 0.9), ("b".into(), 0.1)]);
    let y = [("a".to_string(), 0.2), ("b".to_string(), 0.6)];
    let y_scaled: Vec<(String, f64)> = y.iter().map(|(id, s)| (id.clone(), 10.0 * s)).collect();
    (
        RankingSet::new(ids.clone(), vec![x.clone(), ranking_from_scores("y", &y)]).expect("valid set"),
        RankingSet::new(ids, vec![x, ranking_from_scores("y", &y_scaled)]).expect("valid set"),
    )
}

const GOOD: [&str; 16] = [
    "The Golden Gate Bridge opened in San Francisco in 1937.",
    "Apollo 11 landed on the Moon on 20 July 1969.",
    "Tesla opened its Gigafactory Texas near Austin in April 2022.",
    "The Treaty of Westphalia was signed in Osnabruck and Munster in 1648.",
    "Mount Everest was first summited by Tenzing Norgay and Edmund Hillary in 1953.",
    "Alexander Fleming discovered penicillin at St Mary's Hospital in London in 1928.",
    "The Suez Canal opened to shipping traffic in November 1869.",
    "Ada Lovelace published the first computer program in 1843.",
    "The Rosetta Stone was found near Rashid in Egypt in 1799.",
    "Johannes Gutenberg printed the Gutenberg Bible in Mainz around 1455.",
    "The Hubble Space Telescope was launched by NASA in April 1990.",
    "Nelson Mandela became President of South Africa in May 1994.",
    "The Panama Canal handled its first ocean transit in August 1914.",
    "Dmitri Mendeleev published the periodic table in Saint Petersburg in 1869.",
    "The Berlin Wall fell on 9 November 1989 after weeks of protests.",
    "Charles Darwin published On the Origin of Species in London in 1859.",
];

const FLAWED: [&str; 12] = [
    "It was very popular.",
    "Discovered the new element.",
    "The document title is annual_report.pdf.",
    "This is important to know.",
    "Things happened later on.",
    "They said it was good.",
    "See page 12 for details.",
    "Something changed.",
    "Many people liked it a lot.",
    "Completed the project eventually.",
    "That was the plan.",
    "The section continues below.",
];

/// Gold-labelled ranking instances: each mixes `gold` well-formed factual
/// sentences with flawed ones, shuffled by `seed`.
pub fn ablation_dataset(instances: usize, candidates: usize, gold: usize, seed: u64) -> Vec<AblationInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gold = gold.min(candidates).min(GOOD.len());
    (0..instances)
        .map(|i| {
            let mut good: Vec<&str> = GOOD.to_vec();
            good.shuffle(&mut rng);
            let mut bad: Vec<&str> = FLAWED.to_vec();
            bad.shuffle(&mut rng);
            let mut texts: Vec<(&str, bool)> = good[..gold].iter().map(|t| (*t, true)).collect();
            texts.extend(bad.iter().cycle().take(candidates - gold).map(|t| (*t, false)));
            texts.shuffle(&mut rng);
            let cands: Vec<Candidate> =
                texts.iter().enumerate().map(|(j, (t, _))| Candidate { id: format!("s{j:02}"), text: t.to_string() }).collect();
            let gold_ids = texts.iter().enumerate().filter(|(_, (_, g))| *g).map(|(j, _)| format!("s{j:02}")).collect();
            AblationInstance { id: format!("inst-{i:03}"), candidates: cands, gold: gold_ids }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crrf::{base_fuse, rrf_fuse};
    use std::collections::HashSet;

    #[test]
    fn planted_corpus_shape() {
        let docs = planted_corpus();
        assert_eq!(docs.len(), 100);
        let texts: Vec<&str> = docs.iter().map(|d| d.1.as_str()).collect();
        let distinct: HashSet<&str> = texts.iter().copied().collect();
        assert_eq!(distinct.len(), 80);
        let repeated = texts.iter().filter(|t| texts.iter().filter(|u| u == t).count() == 2).count();
        assert_eq!(repeated, 40);
    }

    #[test]
    fn counterexample_flips_base_not_rrf() {
        let (before, after) = monotone_counterexample();
        assert_ne!(base_fuse(&before).unwrap().order, base_fuse(&after).unwrap().order);
        assert_eq!(rrf_fuse(&before).order, rrf_fuse(&after).order);
    }

    #[test]
    fn ablation_dataset_gold_is_good() {
        let ds = ablation_dataset(5, 8, 2, 7);
        assert_eq!(ds.len(), 5);
        for inst in &ds {
            assert_eq!(inst.candidates.len(), 8);
            assert_eq!(inst.gold.len(), 2);
        }
        assert_eq!(ds, ablation_dataset(5, 8, 2, 7));
    }
}
