use detox_core::attribution::{integrated_gradients, kernel_shap};
use detox_core::backend::toy::parse_replacements;
use detox_core::backend::{similarity, BackendSuite, BaselineSpec, ToyBackend, ToyLexicon};
use detox_core::search::{cost, cost_from, generate_cf, refine, CounterfactualResult, SearchConfig};
use detox_core::text::{diff, tokenize, TokenText};
use detox_core::Error;
use proptest::prelude::*;

fn toy(weights: &[(&str, f64)], table: &str) -> ToyBackend {
    let lexicon = ToyLexicon::new(weights.iter().map(|(t, w)| (t.to_string(), *w)), -1.0, "[MASK]").unwrap();
    ToyBackend::new(lexicon)
        .with_replacements(parse_replacements(table).unwrap())
        .with_fallback(Vec::new())
}

/// Every text reachable with at most two substitutions from the infill pools,
/// returning whether any of them flips the classifier.
fn exhaustive_two_edit_flip(s: &ToyBackend, x: &TokenText, k: usize) -> bool {
    let pools: Vec<Vec<String>> = (0..x.len())
        .map(|i| {
            s.fill_mask(x, i, k)
                .unwrap()
                .into_iter()
                .map(|c| c.token)
                .filter(|t| t != &x.tokens()[i])
                .collect()
        })
        .collect();
    let flips = |z: &TokenText| s.classify(z).unwrap().p_nontoxic > 0.5;
    for i in 0..x.len() {
        for a in &pools[i] {
            let one = x.with_token(i, a).unwrap();
            if flips(&one) {
                return true;
            }
            for j in i + 1..x.len() {
                for b in &pools[j] {
                    if flips(&one.with_token(j, b).unwrap()) {
                        return true;
                    }
                }
            }
        }
    }
    false
}

const TABLE: &str = "\
stupid\tsilly:0.9,dumb:0.7,odd:0.5
dumb\tsilly:0.8,quiet:0.4
idiot\tperson:0.8,fool:0.6
hate\tlike:0.9,dislike:0.6
you\tthey:0.8
ugly\tplain:0.6,old:0.4
";

const WEIGHTS: &[(&str, f64)] = &[
    ("stupid", 2.0),
    ("dumb", 1.5),
    ("idiot", 2.0),
    ("fool", 0.8),
    ("hate", 1.8),
    ("dislike", 0.6),
    ("ugly", 1.4),
    ("you", 0.4),
];

#[test]
fn completeness_against_two_edit_enumeration() {
    let s = toy(WEIGHTS, TABLE);
    let texts = [
        "you stupid idiot",
        "i hate you",
        "ugly and dumb",
        "you are a stupid person",
        "i hate ugly cats",
        "the dumb idiot left",
        "you ugly fool",
        "stupid stupid day",
    ];
    let config = SearchConfig { beam_width: 15, top_k_candidates: 15, ..SearchConfig::default() };
    let mut checked = 0;
    for raw in texts {
        let x = tokenize(raw).unwrap();
        if !s.classify(&x).unwrap().is_toxic() || !exhaustive_two_edit_flip(&s, &x, 15) {
            continue;
        }
        checked += 1;
        let imp = kernel_shap(&s, &x, 2048, 0).unwrap();
        let r = generate_cf(&s, &x, &imp, &config).unwrap_or_else(|e| panic!("{raw}: {e}"));
        assert!(r.p_nontoxic > 0.5);
    }
    assert!(checked >= 5);
}

#[test]
fn results_are_valid_deterministic_and_cost_coherent() {
    let s = ToyBackend::steering();
    let config = SearchConfig::default();
    for raw in ["you are so stupid", "shut up you idiot", "i hate your ugly face", "what a damn shame"] {
        let x = tokenize(raw).unwrap();
        let imp = integrated_gradients(&s, &x, 32, &BaselineSpec::Mask).unwrap();
        let a = generate_cf(&s, &x, &imp, &config).unwrap();
        let b = generate_cf(&s, &x, &imp, &config).unwrap();
        assert_eq!(a, b);
        assert!(a.p_nontoxic > 0.5);
        assert!(s.classify(&a.counterfactual).unwrap().p_nontoxic > 0.5);
        assert_eq!(a.edits, diff(&x, &a.counterfactual).unwrap());
        assert_eq!(a.counterfactual.len(), x.len());
        assert!(a.edits.len() <= config.edit_budget(x.len()));
        for entry in &a.trace {
            assert!((cost_from(entry.p_nontoxic, entry.similarity, config.alpha) - entry.cost).abs() < 1e-9);
        }
        assert!((cost(&s, &a.counterfactual, &x, config.alpha).unwrap() - a.cost).abs() < 1e-9);
    }
}

fn raw_result(s: &ToyBackend, x: &TokenText, cf: &TokenText) -> CounterfactualResult {
    CounterfactualResult {
        original: x.clone(),
        counterfactual: cf.clone(),
        edits: diff(x, cf).unwrap(),
        cost: cost(s, cf, x, 0.3).unwrap(),
        p_nontoxic: s.classify(cf).unwrap().p_nontoxic,
        similarity: similarity(s, cf, x).unwrap(),
        refined: false,
        expansions: 0,
        trace: Vec::new(),
    }
}

/// Smallest number of raw edits that still flips, over every subset.
fn minimal_flipping_subset(s: &ToyBackend, x: &TokenText, cf: &TokenText) -> usize {
    let edits = diff(x, cf).unwrap();
    let n = edits.len();
    (1u32..1 << n)
        .filter_map(|mask| {
            let mut z = x.clone();
            for (i, e) in edits.edits().iter().enumerate() {
                if mask & (1 << i) != 0 {
                    z = z.with_token(e.position, &e.replacement).unwrap();
                }
            }
            (s.classify(&z).unwrap().p_nontoxic > 0.5).then_some(mask.count_ones() as usize)
        })
        .min()
        .unwrap()
}

#[test]
fn refine_matches_subset_brute_force() {
    let s = toy(&[("f**k", 3.0), ("stupid", 2.0)], "f**k\theck:0.8\nyou\tthey:0.8\nstupid\tsilly:0.9\n");
    let config = SearchConfig { max_edit_fraction: 1.0, ..SearchConfig::default() };
    let cases = [
        ("f**k you", "heck they", 1),
        ("you stupid man", "they silly man", 1),
        ("f**k you stupid", "heck you silly", 2),
    ];
    for (raw, cf, minimal) in cases {
        let x = tokenize(raw).unwrap();
        let cf = tokenize(cf).unwrap();
        assert_eq!(minimal_flipping_subset(&s, &x, &cf), minimal);
        let base = raw_result(&s, &x, &cf);
        let r = refine(&s, &x, &base, &config, 8).unwrap();
        assert!(r.p_nontoxic > 0.5);
        assert!(r.edits.len() <= base.edits.len());
        if minimal < base.edits.len() {
            assert!(r.refined, "{raw}");
            assert_eq!(r.edits.len(), minimal);
        } else {
            assert!(!r.refined, "{raw}");
            assert_eq!(r, CounterfactualResult { refined: false, ..base });
        }
    }
}

#[test]
fn missing_candidates_report_failure() {
    let s = toy(&[], "");
    let lexicon = ToyLexicon::new(Vec::<(String, f64)>::new(), 1.0, "[MASK]").unwrap();
    let s2 = ToyBackend::new(lexicon).with_replacements(Default::default()).with_fallback(Vec::new());
    let x = tokenize("plain words only").unwrap();
    assert!(!s.classify(&x).unwrap().is_toxic());
    let imp = kernel_shap(&s2, &x, 64, 0).unwrap();
    assert!(matches!(generate_cf(&s2, &x, &imp, &SearchConfig::default()), Err(Error::NoCounterfactualFound { .. })));
}

proptest! {
    #[test]
    fn lower_weight_substitution_never_raises_toxicity(
        words in prop::collection::vec(prop::sample::select(vec!["stupid", "dumb", "idiot", "fool", "hate", "you", "cats"]), 1..8),
        pos in 0usize..8,
        replacement in prop::sample::select(vec!["stupid", "dumb", "idiot", "fool", "hate", "you", "cats"]),
    ) {
        let s = toy(WEIGHTS, TABLE);
        let x = TokenText::from_tokens(words.clone()).unwrap();
        let pos = pos % x.len();
        let lex = s.lexicon();
        if lex.weight(replacement) <= lex.weight(words[pos]) {
            let z = x.with_token(pos, replacement).unwrap();
            prop_assert!(s.classify(&z).unwrap().p_toxic <= s.classify(&x).unwrap().p_toxic);
        }
    }
}
