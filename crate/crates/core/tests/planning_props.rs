mod common;

use std::collections::{BTreeMap, BTreeSet};

use causeway::planner::{build_initial_graph, refine_graph, RefineOptions};
use causeway::reasoner::{BiasedReasoner, DependencyQuery, DeterministicReasoner, Reasoner};
use causeway::rules::{evaluate, intervene, OrderKey, Polarity, Predicate, Verdict};
use causeway::task::{GraphError, Provenance};
use causeway::world::ActionKind;
use causeway::{builtin_rules, Rule, RuleSet, TaskGraph};
use common::graphs::{
    check_refine_case, random_node, reaches, refine_case, to_subtask, toggle_graph, Node, Pair, RULE_IDS,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn nodes(seed: u64, n: usize) -> Vec<Node> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_node(&mut rng)).collect()
}

/// Kahn's algorithm over an explicit edge set.
fn has_topological_order(n: u32, edges: &BTreeSet<Pair>) -> bool {
    let mut indegree: BTreeMap<u32, usize> = (1..=n).map(|v| (v, 0)).collect();
    for e in edges {
        *indegree.get_mut(&e.1).unwrap() += 1;
    }
    let mut ready: Vec<u32> = indegree.iter().filter(|(_, d)| **d == 0).map(|(v, _)| *v).collect();
    let mut seen = 0;
    while let Some(v) = ready.pop() {
        seen += 1;
        for e in edges.iter().filter(|e| e.0 == v) {
            let d = indegree.get_mut(&e.1).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push(e.1);
            }
        }
    }
    seen == n as usize
}

fn extension(which: u8) -> Rule {
    let (statement, counterfactual, predicate) = match which % 3 {
        0 => (
            "Earlier stages are switched first.",
            "Stages can be switched in any order.",
            Predicate::Ordered { kinds: vec![ActionKind::Toggle], key: OrderKey::Stage, same_column: false },
        ),
        1 => (
            "Crafted goods exist before they are handed over.",
            "Goods can be handed over before they are crafted.",
            Predicate::ItemFlow { producers: vec![ActionKind::Craft], consumers: vec![ActionKind::Handover] },
        ),
        _ => (
            "Mined blocks are collected before they are handed over.",
            "Blocks can be handed over before they are mined.",
            Predicate::ItemFlow { producers: vec![ActionKind::MineBlock], consumers: vec![ActionKind::Handover] },
        ),
    };
    Rule { id: 6, statement: statement.into(), counterfactual: counterfactual.into(), predicate }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn accepted_insertions_stay_acyclic(n in 1u32..10, pairs in prop::collection::vec((1u32..10, 1u32..10), 0..40)) {
        let mut g = toggle_graph(n, &BTreeSet::new());
        let mut accepted = BTreeSet::new();
        for (a, b) in pairs.into_iter().filter(|(a, b)| *a <= n && *b <= n) {
            let closes_cycle = a == b || reaches(&accepted, b, a);
            match g.add_edge(a, b, Provenance::rules([])) {
                Ok(()) => {
                    prop_assert!(!closes_cycle, "accepted ({a}, {b}) which closes a cycle");
                    accepted.insert((a, b));
                }
                Err(GraphError::WouldCycle(..)) => prop_assert!(closes_cycle),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
        prop_assert_eq!(g.edge_set(), accepted.clone());
        prop_assert!(has_topological_order(n, &accepted));
        prop_assert!(g.topo_order().is_some());
    }

    #[test]
    fn counterfactual_withdraws_and_preserves_coverage(seed in any::<u64>()) {
        let ns = nodes(seed, 2);
        let (p, q) = (to_subtask(1, &ns[0]), to_subtask(2, &ns[1]));
        for rule in builtin_rules().rules() {
            let normal = evaluate(rule, &p, &q, Polarity::Normal).unwrap();
            let cf = evaluate(rule, &p, &q, Polarity::Counterfactual).unwrap();
            if normal.is_directed() {
                prop_assert_eq!(cf, Verdict::NoEdge);
            }
            if normal == Verdict::NotCovered {
                prop_assert_eq!(cf, Verdict::NotCovered);
            }
            prop_assert_eq!(evaluate(rule, &p, &q, Polarity::Normal).unwrap(), normal);
        }
    }

    #[test]
    fn rule_order_does_not_matter(seed in any::<u64>(), n in 2usize..7) {
        let ns = nodes(seed, n);
        prop_assume!(common::graphs::oracle_rule_edges(&ns).is_some());
        let subs: Vec<_> = ns.iter().enumerate().map(|(i, x)| to_subtask(i as u32 + 1, x)).collect();
        let base = builtin_rules();
        let mut shuffled = base.rules().to_vec();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let other = RuleSet::new(shuffled).unwrap();
        let (a, b) = (base.normal(), other.normal());
        for p in &subs {
            for q in subs.iter().filter(|q| q.id != p.id) {
                let x = DeterministicReasoner.query(&DependencyQuery::new(&a, p, q)).unwrap();
                let y = DeterministicReasoner.query(&DependencyQuery::new(&b, p, q)).unwrap();
                prop_assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn intervening_on_an_uncovering_rule_changes_nothing(seed in any::<u64>()) {
        let ns = nodes(seed, 2);
        let (p, q) = (to_subtask(1, &ns[0]), to_subtask(2, &ns[1]));
        let rules = builtin_rules();
        let normal = DeterministicReasoner.query(&DependencyQuery::new(&rules.normal(), &p, &q)).unwrap();
        for (i, rule) in rules.rules().iter().enumerate() {
            if evaluate(rule, &p, &q, Polarity::Normal).unwrap().is_directed() {
                continue;
            }
            let set = intervene(&rules, i + 1).unwrap();
            let under = DeterministicReasoner.query(&DependencyQuery::new(&set.effective, &p, &q)).unwrap();
            prop_assert_eq!(under, normal);
        }
    }

    #[test]
    fn pruning_matches_the_oracle(seed in any::<u64>()) {
        let check = check_refine_case(&refine_case(seed));
        prop_assert!(check.pruning.is_empty(), "{:?}", check.pruning);
    }

    #[test]
    fn effect_ledger_algebra(seed in any::<u64>()) {
        let check = check_refine_case(&refine_case(seed));
        prop_assert!(check.algebra.is_empty(), "{:?}", check.algebra);
    }

    #[test]
    fn refined_edges_are_a_subset_and_refinement_is_idempotent(seed in any::<u64>()) {
        let case = refine_case(seed);
        let rules = builtin_rules();
        let r = BiasedReasoner::new(DeterministicReasoner, case.hallucinated.iter().copied());
        let (g, _) = build_initial_graph(&case.subtasks(), &rules, &r).unwrap();
        let opts = RefineOptions::for_reasoner(&r);
        let (once, _) = refine_graph(&g, &rules, &r, &opts).unwrap();
        prop_assert!(once.edge_set().is_subset(&g.edge_set()));
        let (twice, ledger) = refine_graph(&once, &rules, &r, &opts).unwrap();
        prop_assert_eq!(&twice, &once);
        prop_assert!(ledger.iter().all(|e| e.kept));
    }

    #[test]
    fn adding_a_rule_keeps_kept_edges(seed in any::<u64>(), which in any::<u8>()) {
        let case = refine_case(seed);
        let base = builtin_rules();
        let extended = RuleSet::with_extensions(vec![extension(which)]).unwrap();
        let r = BiasedReasoner::new(DeterministicReasoner, case.hallucinated.iter().copied());
        let opts = RefineOptions::for_reasoner(&r);
        let run = |rules: &RuleSet| -> (TaskGraph, Vec<causeway::AteResult>) {
            let (g, _) = build_initial_graph(&case.subtasks(), rules, &r).unwrap();
            refine_graph(&g, rules, &r, &opts).unwrap()
        };
        let (_, before) = run(&base);
        let (_, after) = run(&extended);
        for b in before.iter().filter(|e| e.kept) {
            let a = after.iter().find(|e| e.pair == b.pair);
            prop_assert!(a.is_some_and(|a| a.kept && a.aggregate.signum() == b.aggregate.signum()),
                "edge {:?} lost: before {:?}, after {:?}", b.pair, b, a);
        }
    }
}

#[test]
fn oracle_agrees_with_a_hand_worked_case() {
    let ns = [
        Node::Withdraw("stone"),
        Node::Equip("stone"),
        Node::Place { item: "stone", x: 0, y: 64 },
        Node::Place { item: "stone", x: 0, y: 65 },
        Node::Toggle(0),
    ];
    let edges = common::graphs::oracle_rule_edges(&ns).unwrap();
    let want: BTreeMap<Pair, BTreeSet<u32>> = [
        ((1, 2), [2].into()),
        ((1, 3), [1].into()),
        ((1, 4), [1].into()),
        ((2, 3), [3].into()),
        ((2, 4), [3].into()),
        ((3, 4), [4].into()),
    ]
    .into_iter()
    .collect();
    assert_eq!(edges, want);
    assert_eq!(RULE_IDS.len(), builtin_rules().len());
}
