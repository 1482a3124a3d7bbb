mod common;

use common::{finite_difference_check, random_instance, ww_variant};
use wane::model::{pairs_loss, Aggregate, Align, DirectedPair, Gradients, Mode, Negatives};

fn check_mode(mode: Mode, instances: u64) {
    for k in 0..instances {
        let (align, aggregate) = if mode == Mode::WaneWw { ww_variant(k as usize) } else { (Align::Sub, Aggregate::Max) };
        let word_dim = if k % 2 == 0 { 4 } else { 6 };
        let inst = random_instance(1000 + k, mode, align, aggregate, word_dim);
        let mut grads = Gradients::for_params(&inst.params);
        pairs_loss(&inst.params, &inst.corpus, &[inst.pair()], &inst.masks, &mut grads).unwrap();
        let report = finite_difference_check(&inst.params, &grads, |p| inst.loss_at(p));
        assert!(
            report.worst_rel < 1e-4,
            "{mode} {align}/{aggregate} instance {k}: worst relative error {:.3e}",
            report.worst_rel
        );
    }
}

#[test]
fn average_mode_gradients() {
    check_mode(Mode::Wane, 30);
}

#[test]
fn word_by_context_gradients() {
    check_mode(Mode::WaneWc, 30);
}

#[test]
fn word_by_word_gradients_all_alignments() {
    check_mode(Mode::WaneWw, 30);
}

/// Both orientations of an edge evaluated together share the pair encoding;
/// the shared path must still produce exact gradients.
#[test]
fn both_orientations_share_encodings() {
    for k in 0..20u64 {
        let (align, aggregate) = ww_variant(k as usize);
        let inst = random_instance(7000 + k, Mode::WaneWw, align, aggregate, 4);
        let reverse = Negatives::shared(inst.negatives.per_term[0].clone());
        fn both<'a>(inst: &'a common::Instance, reverse: &'a Negatives) -> Vec<DirectedPair<'a>> {
            vec![
                inst.pair(),
                DirectedPair {
                    target: inst.anchor,
                    anchor: inst.target,
                    weight: inst.weight,
                    negatives: reverse,
                },
            ]
        }
        let pairs = |inst| both(inst, &reverse);
        let mut grads = Gradients::for_params(&inst.params);
        let loss = pairs_loss(&inst.params, &inst.corpus, &pairs(&inst), &inst.masks, &mut grads).unwrap();
        let report = finite_difference_check(&inst.params, &grads, |p| {
            let mut g = Gradients::for_params(p);
            pairs_loss(p, &inst.corpus, &pairs(&inst), &inst.masks, &mut g).unwrap()
        });
        assert!(report.worst_rel < 1e-4, "instance {k}: {:.3e}", report.worst_rel);

        // Sum of the two single-orientation losses.
        let mut g = Gradients::for_params(&inst.params);
        let ps = pairs(&inst);
        let a = pairs_loss(&inst.params, &inst.corpus, &ps[..1], &inst.masks, &mut g).unwrap();
        let b = pairs_loss(&inst.params, &inst.corpus, &ps[1..], &inst.masks, &mut g).unwrap();
        assert!((loss - (a + b)).abs() < 1e-12);
    }
}
