//! Cross-validation of the samplers and the symmetry analysis against the
//! exact enumeration oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wisynth_core::inference::{
    exact_posterior, gibbs_sample, EnumerationBudget, GibbsSampler,
};
use wisynth_core::model::structurally_symmetric;
use wisynth_core::{
    swap_theta_blocks, BuildOptions, FactorModel, IlfSpec, LabelGraphBuilder, RelationType,
};

/// Husky/bulldog graph: both subsumed by a seen dog label. With
/// `separated`, an extra seen label subsumes only husky.
fn symmetric_pair_model(separated: bool) -> FactorModel {
    use RelationType::*;
    let mut b = LabelGraphBuilder::new();
    let husky = b.add_desired("husky");
    let bulldog = b.add_desired("bulldog");
    let cat = b.add_desired("cat");
    let dog = b.add_seen("dog");
    let feline = b.add_seen("feline");
    b.relate(dog, husky, Subsuming)
        .relate(dog, bulldog, Subsuming)
        .relate(dog, cat, Exclusive)
        .relate(feline, cat, Subsuming)
        .relate(feline, husky, Exclusive)
        .relate(feline, bulldog, Exclusive)
        .relate(dog, feline, Exclusive);
    let mut ilfs = vec![
        IlfSpec::new(0, vec![dog, feline], true),
        IlfSpec::new(1, vec![dog], true),
    ];
    if separated {
        let arctic = b.add_seen("arctic");
        b.relate(arctic, husky, Subsuming)
            .relate(arctic, bulldog, Exclusive)
            .relate(arctic, cat, Exclusive)
            .relate(arctic, dog, Overlapping)
            .relate(arctic, feline, Exclusive);
        ilfs.push(IlfSpec::new(2, vec![arctic], true));
    }
    let graph = b.build().unwrap();
    assert!(graph.check_consistency().consistent);
    assert_eq!(graph.check_distinguishability().distinguishable, separated);
    let mut model = FactorModel::build_plrm(&graph, &ilfs, BuildOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let theta: Vec<f64> =
        (0..model.dependency_count()).map(|_| rng.gen_range(0.05..1.2)).collect();
    model.set_theta(theta).unwrap();
    model
}

fn all_lambda_rows(model: &FactorModel) -> Vec<Vec<Option<usize>>> {
    let mut rows: Vec<Vec<Option<usize>>> = vec![vec![]];
    for dom in model.ilf_domains() {
        let mut options: Vec<Option<usize>> = dom.outputs.iter().map(|&p| Some(p)).collect();
        if dom.can_abstain {
            options.push(None);
        }
        rows = rows
            .into_iter()
            .flat_map(|r| {
                options.iter().map(move |&o| {
                    let mut r2 = r.clone();
                    r2.push(o);
                    r2
                })
            })
            .collect();
    }
    rows
}

#[test]
fn block_swap_exchanges_posteriors_of_a_symmetric_pair() {
    let model = symmetric_pair_model(false);
    assert!(structurally_symmetric(&model, 0, 1));
    let swap = swap_theta_blocks(&model, 0, 1).unwrap();
    assert!(swap.fully_aligned);
    let mut swapped = model.clone();
    swapped.set_theta(swap.theta).unwrap();

    let budget = EnumerationBudget::default();
    for lambda in all_lambda_rows(&model) {
        let base = exact_posterior(&model, &lambda, &budget).unwrap();
        let tilde = exact_posterior(&swapped, &lambda, &budget).unwrap();
        for bits in 0..base.ybar_count {
            let p = base.y_given_ybar(bits);
            let q = tilde.y_given_ybar(bits);
            // husky and bulldog swap, everything else stays
            assert!((p[0] - q[1]).abs() < 1e-10);
            assert!((p[1] - q[0]).abs() < 1e-10);
            assert!((p[2] - q[2]).abs() < 1e-10);
            assert!((p[3] - q[3]).abs() < 1e-10);
        }
    }
}

#[test]
fn block_swap_fails_once_the_symmetry_is_broken() {
    let model = symmetric_pair_model(true);
    assert!(!structurally_symmetric(&model, 0, 1));
    let swap = swap_theta_blocks(&model, 0, 1).unwrap();
    assert!(!swap.fully_aligned);
    let mut swapped = model.clone();
    swapped.set_theta(swap.theta).unwrap();

    let budget = EnumerationBudget::default();
    let mut worst = 0.0f64;
    for lambda in all_lambda_rows(&model) {
        let base = exact_posterior(&model, &lambda, &budget).unwrap();
        let tilde = exact_posterior(&swapped, &lambda, &budget).unwrap();
        for bits in 0..base.ybar_count {
            let p = base.y_given_ybar(bits);
            let q = tilde.y_given_ybar(bits);
            worst = worst.max((p[0] - q[1]).abs());
        }
    }
    assert!(worst > 1e-3, "swap still matched to {worst}");
}

#[test]
fn gibbs_marginals_track_exact_on_a_generated_model() {
    let task =
        wisynth_core::generate_task(&wisynth_core::SimSpec::uniform(3, 4, 3, 0.75, 0.1, 20, 13))
            .unwrap();
    let mut model =
        FactorModel::build_plrm(&task.graph, &task.ilfs, BuildOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let theta: Vec<f64> =
        (0..model.dependency_count()).map(|_| rng.gen_range(f64::EPSILON..=1.0)).collect();
    model.set_theta(theta).unwrap();

    let lambda = model.lambda_from_row(task.outputs.row(0)).unwrap();
    let exact = exact_posterior(&model, &lambda, &EnumerationBudget::default())
        .unwrap()
        .y_marginal();
    let mut counts = vec![0usize; model.y_count()];
    let mut total = 0usize;
    for a in gibbs_sample(&model, Some(&lambda), 21_000, 1_000, 8).unwrap() {
        counts[model.y_index(a.y)] += 1;
        total += 1;
    }
    let tv: f64 = counts
        .iter()
        .zip(&exact)
        .map(|(&c, p)| (c as f64 / total as f64 - p).abs())
        .sum::<f64>()
        / 2.0;
    assert!(tv <= 0.02, "total variation {tv}");
}

#[test]
fn single_site_kernels_preserve_the_exact_table_on_a_generated_model() {
    let task =
        wisynth_core::generate_task(&wisynth_core::SimSpec::uniform(2, 4, 2, 0.8, 0.2, 10, 29))
            .unwrap();
    let mut model =
        FactorModel::build_plrm(&task.graph, &task.ilfs, BuildOptions::default()).unwrap();
    let theta: Vec<f64> =
        (0..model.dependency_count()).map(|i| 0.1 + 0.07 * (i % 11) as f64).collect();
    model.set_theta(theta).unwrap();
    let lambda = model.lambda_from_row(task.outputs.row(0)).unwrap();
    let table = exact_posterior(&model, &lambda, &EnumerationBudget::default()).unwrap();
    let mut sampler = GibbsSampler::new(&model, Some(&lambda), 0).unwrap();

    // one bit kernel per site: push the table through, expect it unchanged
    for site in 0..model.seen_labels().len() {
        let mut after = vec![0.0; table.probs.len()];
        for y in 0..table.y_count {
            for bits in 0..table.ybar_count {
                let y_bar: Vec<bool> =
                    (0..model.seen_labels().len()).map(|s| bits & (1 << s) != 0).collect();
                sampler.set_state(wisynth_core::Assignment {
                    y: model.y_value(y),
                    y_bar,
                    lambda: lambda.clone(),
                });
                let kernel = sampler.full_conditional_y_bar(site);
                for (value, k) in kernel.iter().enumerate() {
                    let target = (bits & !(1 << site)) | (value << site);
                    after[y * table.ybar_count + target] += table.prob(y, bits) * k;
                }
            }
        }
        for (a, b) in after.iter().zip(&table.probs) {
            assert!((a - b).abs() < 1e-9, "site {site} kernel moved the table");
        }
    }
}
