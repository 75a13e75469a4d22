use std::collections::{BTreeSet, HashSet};

use proptest::prelude::*;
use toolgate::registry::{serialize_schema, RegistryBuilder, ToolRegistry, ToolSpec};

/// Registry of `sizes.len()` libraries; library `i` holds `sizes[i]` tools.
fn registry(sizes: &[usize]) -> ToolRegistry {
    let mut b = RegistryBuilder::new();
    for (i, &n) in sizes.iter().enumerate() {
        let tools = (0..n)
            .map(|j| ToolSpec::without_parameters(format!("t{i}_{j}"), format!("tool {j} of library {i}")))
            .collect();
        b.register_library(format!("lib{i}"), "", tools).unwrap();
    }
    b.seal()
}

fn names(mask: &[bool]) -> Vec<String> {
    mask.iter()
        .enumerate()
        .filter(|(_, &w)| w)
        .map(|(i, _)| format!("lib{i}"))
        .collect()
}

fn arb_registry() -> impl Strategy<Value = (Vec<usize>, Vec<bool>, Vec<bool>)> {
    prop::collection::vec(0usize..4, 1..7).prop_flat_map(|sizes| {
        let n = sizes.len();
        (
            Just(sizes),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #[test]
    fn subset_is_monotone((sizes, s, extra) in arb_registry()) {
        let reg = registry(&sizes);
        let t: Vec<bool> = s.iter().zip(&extra).map(|(a, b)| *a || *b).collect();
        let small: HashSet<String> = reg.subset_schema(names(&s)).unwrap().tool_names().map(String::from).collect();
        let large: HashSet<String> = reg.subset_schema(names(&t)).unwrap().tool_names().map(String::from).collect();
        prop_assert!(small.is_subset(&large));
    }

    #[test]
    fn byte_length_bounded_by_full((sizes, s, _) in arb_registry()) {
        let reg = registry(&sizes);
        let subset = serialize_schema(&reg.subset_schema(names(&s)).unwrap());
        let full = serialize_schema(&reg.full_schema());
        prop_assert!(subset.len() <= full.len());
        let covers = sizes.iter().zip(&s).all(|(&n, &w)| w || n == 0);
        prop_assert_eq!(subset.len() == full.len(), covers);
    }

    #[test]
    fn serialization_is_deterministic_and_injective((sizes, s, t) in arb_registry()) {
        let reg = registry(&sizes);
        let a = reg.subset_schema(names(&s)).unwrap();
        let b = reg.subset_schema(names(&t)).unwrap();
        prop_assert_eq!(serialize_schema(&a), serialize_schema(&reg.subset_schema(names(&s)).unwrap()));
        prop_assert_eq!(a == b, serialize_schema(&a) == serialize_schema(&b));
    }

    #[test]
    fn full_equals_subset_of_everything(sizes in prop::collection::vec(0usize..4, 1..7)) {
        let reg = registry(&sizes);
        let all = reg.subset_schema(reg.library_names()).unwrap();
        prop_assert_eq!(&all, &reg.full_schema());
        prop_assert_eq!(serialize_schema(&all), serialize_schema(&reg.full_schema()));
    }

    #[test]
    fn document_round_trips(sizes in prop::collection::vec(0usize..4, 1..5)) {
        let reg = registry(&sizes);
        let text = serde_json::to_string(&reg.to_document()).unwrap();
        let back = ToolRegistry::from_json_str(&text).unwrap();
        prop_assert_eq!(back.to_document(), reg.to_document());
        let order: Vec<&str> = back.library_names().collect();
        let expected: Vec<String> = (0..sizes.len()).map(|i| format!("lib{i}")).collect();
        prop_assert_eq!(order, expected.iter().map(String::as_str).collect::<Vec<_>>());
    }
}

#[test]
fn origin_records_requested_libraries() {
    let reg = registry(&[1, 1, 1]);
    let schema = reg.subset_schema(["lib2", "lib0"]).unwrap();
    assert_eq!(schema.origin(), &BTreeSet::from(["lib0".to_string(), "lib2".to_string()]));
    assert_eq!(schema.tool_names().collect::<Vec<_>>(), ["t0_0", "t2_0"]);
}
