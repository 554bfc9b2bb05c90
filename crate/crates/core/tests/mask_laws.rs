mod common;

use common::{law_bits, mask_set_from_bits};
use concept_neurons::continual::reg_mask;
use concept_neurons::select::MaskSet;
use proptest::prelude::*;

fn triple() -> impl Strategy<Value = (MaskSet, MaskSet, MaskSet)> {
    let n = law_bits();
    (
        prop::collection::vec(any::<bool>(), n),
        prop::collection::vec(prop::bool::weighted(0.8), n),
        prop::collection::vec(prop::bool::weighted(0.1), n),
    )
        .prop_map(|(a, b, c)| (mask_set_from_bits(&a), mask_set_from_bits(&b), mask_set_from_bits(&c)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn and_aggregation_only_shrinks((a, b, c) in triple()) {
        let ab = a.and(&b).unwrap();
        prop_assert!(ab.is_subset_of(&a).unwrap() && ab.is_subset_of(&b).unwrap());
        let abc = ab.and(&c).unwrap();
        prop_assert!(abc.is_subset_of(&ab).unwrap());
        prop_assert_eq!(&ab, &b.and(&a).unwrap());
        prop_assert_eq!(&abc, &a.and(&b.and(&c).unwrap()).unwrap());
    }

    #[test]
    fn concept_mask_is_inside_base_and_outside_general((base, general, _) in triple()) {
        let concept = base.and_not(&general).unwrap();
        prop_assert!(concept.is_subset_of(&base).unwrap());
        prop_assert!(concept.is_disjoint_from(&general).unwrap());
        let rebuilt = concept.or(&base.and(&general).unwrap()).unwrap();
        prop_assert_eq!(&rebuilt, &base);
        prop_assert_eq!(&concept, &base.and(&general.not()).unwrap());
    }

    #[test]
    fn reg_mask_is_contained((cur, p1, p2) in triple()) {
        let reg = reg_mask(&cur, &[p1.clone(), p2.clone()]).unwrap();
        prop_assert!(reg.is_subset_of(&cur).unwrap());
        prop_assert!(reg.is_subset_of(&p1.or(&p2).unwrap()).unwrap());
        prop_assert!(reg_mask(&cur, &[]).unwrap().is_empty());
    }

    #[test]
    fn complement_laws((a, b, _) in triple()) {
        prop_assert_eq!(&a.not().not(), &a);
        prop_assert_eq!(a.not().popcount() + a.popcount(), a.total_bits());
        prop_assert_eq!(&a.and(&b).unwrap().not(), &a.not().or(&b.not()).unwrap());
        let bytes = a.to_bytes();
        prop_assert_eq!(bytes, a.clone().to_bytes());
    }
}
