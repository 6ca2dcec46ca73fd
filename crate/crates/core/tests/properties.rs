use duallearn::data::{group_split, parse_csv, write_csv, CsvSchema, LoadedCsv};
use duallearn::lagrangian::{empirical_lagrangian, evaluate, slacks};
use duallearn::loss::{LossKind, LossSpec};
use duallearn::models::{parse_model, write_model, OptimizerConfig};
use duallearn::oracle::{dual_enumerate, ecrm_enumerate, EnumerableProblem, MuGrid};
use duallearn::primaldual::{dual_update, parse_trace, trace_jsonl};
use duallearn::problem::empirical_risk;
use duallearn::rate::{indicator_rate_loss, sigmoid_surrogate};
use duallearn::robust::{perturb, AttackConfig};
use duallearn::{
    train, Architecture, ConstraintSpec, Dataset, DualState, InnerSolverConfig, Label, ModelState,
    Problem, RiskTerm, Sample, TrainConfig,
};
use proptest::prelude::*;

fn loss_strategy() -> impl Strategy<Value = LossSpec> {
    prop_oneof![
        Just(LossSpec::zero_one()),
        (1e-6..0.4f64).prop_map(|p| LossSpec::cross_entropy(p).unwrap()),
        (0.1..10.0f64).prop_map(|b| LossSpec::squared(b).unwrap()),
        (0.1..10.0f64).prop_map(|b| LossSpec::hinge(b).unwrap()),
        (0.1..10.0f64).prop_map(|b| LossSpec::absolute(b).unwrap()),
        (-1.0..1.0f64).prop_map(|s| LossSpec::rate_indicator(s).unwrap()),
        (1.0..20.0f64, -1.0..1.0f64).prop_map(|(a, s)| LossSpec::rate_sigmoid(a, s).unwrap()),
        (-3.0..3.0f64, -3.0..3.0f64, 0.1..10.0f64)
            .prop_map(|(a, o, b)| LossSpec::linear_score(a, o, b).unwrap()),
        (0.1..10.0f64).prop_map(|b| LossSpec::absolute_score(b).unwrap()),
    ]
}

fn label_for(loss: &LossSpec, raw: f64) -> Label {
    match loss.kind {
        LossKind::Squared | LossKind::Absolute | LossKind::AbsoluteScore => Label::Real(raw),
        _ => Label::Class((raw > 0.0) as usize),
    }
}

fn prediction_for(loss: &LossSpec, raw: f64) -> f64 {
    match loss.kind {
        LossKind::ClampedCrossEntropy { .. } | LossKind::ZeroOne => 1.0 / (1.0 + (-raw).exp()),
        _ => raw,
    }
}

fn samples_strategy(dim: usize, max: usize) -> impl Strategy<Value = Vec<Sample>> {
    prop::collection::vec(
        (prop::collection::vec(-2.0..2.0f64, dim), -2.0..2.0f64),
        1..max,
    )
    .prop_map(|rows| {
        rows.into_iter()
            .map(|(x, y)| Sample::new(x, Label::Real(y)))
            .collect()
    })
}

fn linear_model(w: f64) -> ModelState {
    ModelState::new(Architecture::linear(1, 1, false), vec![w]).unwrap()
}

/// One objective and `m` absolute-loss constraints over 1-D data.
fn small_problem(obj: Vec<Sample>, cons: Vec<(Vec<Sample>, f64)>) -> Problem {
    let objective = RiskTerm::new(
        LossSpec::squared(4.0).unwrap(),
        Dataset::new("obj", obj).unwrap(),
    );
    let constraints = cons
        .into_iter()
        .enumerate()
        .map(|(i, (s, c))| {
            ConstraintSpec::new(
                RiskTerm::new(
                    LossSpec::absolute(3.0).unwrap(),
                    Dataset::new(format!("c{i}"), s).unwrap(),
                ),
                c,
            )
        })
        .collect();
    Problem::new(objective, constraints).unwrap()
}

fn problem_strategy() -> impl Strategy<Value = Problem> {
    (
        samples_strategy(1, 8),
        prop::collection::vec((samples_strategy(1, 6), 0.1..1.5f64), 1..4),
    )
        .prop_map(|(o, c)| small_problem(o, c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn losses_stay_in_range(loss in loss_strategy(), z in -50.0..50.0f64, y in -3.0..3.0f64) {
        let v = loss.eval(&[prediction_for(&loss, z)], &label_for(&loss, y)).unwrap();
        prop_assert!((0.0..=loss.bound).contains(&v), "{v} outside [0, {}]", loss.bound);
    }

    #[test]
    fn risk_of_union_is_weighted_mean(
        a in samples_strategy(2, 12),
        b in samples_strategy(2, 12),
        w in prop::collection::vec(-1.0..1.0f64, 3),
    ) {
        let model = ModelState::new(Architecture::linear(2, 1, true), w).unwrap();
        let loss = LossSpec::squared(5.0).unwrap();
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let da = Dataset::new("a", a).unwrap();
        let db = Dataset::new("b", b).unwrap();
        let joint = Dataset::concat("ab", &da, &db).unwrap();
        let lhs = empirical_risk(&model, &loss, &joint).unwrap();
        let rhs = (na * empirical_risk(&model, &loss, &da).unwrap()
            + nb * empirical_risk(&model, &loss, &db).unwrap())
            / (na + nb);
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn risk_ignores_sample_order(samples in samples_strategy(1, 20), w in -2.0..2.0f64, rot in 0usize..20) {
        let loss = LossSpec::absolute(3.0).unwrap();
        let mut shuffled = samples.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let a = empirical_risk(&linear_model(w), &loss, &Dataset::new("a", samples).unwrap()).unwrap();
        let b = empirical_risk(&linear_model(w), &loss, &Dataset::new("b", shuffled).unwrap()).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn lagrangian_is_affine_in_mu(
        problem in problem_strategy(),
        w in -2.0..2.0f64,
        raw in prop::collection::vec((0.0..5.0f64, 0.0..5.0f64), 3),
        lambda in 0.0..=1.0f64,
    ) {
        let m = problem.m();
        let a: Vec<f64> = raw.iter().take(m).map(|p| p.0).collect();
        let b: Vec<f64> = raw.iter().take(m).map(|p| p.1).collect();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
        let model = linear_model(w);
        let at = |mu: &[f64]| {
            empirical_lagrangian(&model, &DualState::new(mu.to_vec()).unwrap(), &problem).unwrap()
        };
        let lhs = at(&mix);
        let rhs = lambda * at(&a) + (1.0 - lambda) * at(&b);
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn slacks_are_risk_minus_threshold(problem in problem_strategy(), w in -2.0..2.0f64) {
        let model = linear_model(w);
        let s = slacks(&model, &problem).unwrap();
        let e = evaluate(&model, &problem).unwrap();
        prop_assert_eq!(&s, &e.slacks);
        for (si, c) in s.iter().zip(&problem.constraints) {
            prop_assert_eq!(*si, c.term.risk(&model).unwrap() - c.threshold);
        }
        let zero = DualState::zeros(problem.m());
        prop_assert_eq!(empirical_lagrangian(&model, &zero, &problem).unwrap(), e.objective);
    }

    #[test]
    fn dual_never_exceeds_primal(
        problem in problem_strategy(),
        candidates in prop::collection::vec(-2.0..2.0f64, 2..6),
    ) {
        let ep = EnumerableProblem::new(
            problem,
            Architecture::linear(1, 1, false),
            candidates.into_iter().map(|c| vec![c]).collect(),
        ).unwrap();
        let grid = MuGrid { max: 8.0, points: 20, refine: true };
        let d = dual_enumerate(&ep, &grid).unwrap().d_hat;
        let p = ecrm_enumerate(&ep).unwrap().value();
        prop_assert!(d <= p, "D {d} > P {p}");
    }

    #[test]
    fn dual_function_is_concave(
        problem in problem_strategy(),
        candidates in prop::collection::vec(-2.0..2.0f64, 2..6),
        raw in prop::collection::vec((0.0..5.0f64, 0.0..5.0f64), 3),
        lambda in 0.0..=1.0f64,
    ) {
        let m = problem.m();
        let ep = EnumerableProblem::new(
            problem,
            Architecture::linear(1, 1, false),
            candidates.into_iter().map(|c| vec![c]).collect(),
        ).unwrap();
        let table = ep.table().unwrap();
        let a: Vec<f64> = raw.iter().take(m).map(|p| p.0).collect();
        let b: Vec<f64> = raw.iter().take(m).map(|p| p.1).collect();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
        let lhs = table.dual_value(&mix);
        let rhs = lambda * table.dual_value(&a) + (1.0 - lambda) * table.dual_value(&b);
        prop_assert!(lhs >= rhs - 1e-10);
    }

    #[test]
    fn projected_ascent_keeps_mu_nonnegative(
        start in prop::collection::vec(0.0..3.0f64, 1..5),
        slack in prop::collection::vec(-10.0..10.0f64, 5),
        eta in 1e-4..2.0f64,
    ) {
        let m = start.len();
        let next = dual_update(&DualState::new(start.clone()).unwrap(), &slack[..m], eta).unwrap();
        for (i, v) in next.mu().iter().enumerate() {
            prop_assert!(*v >= 0.0);
            prop_assert_eq!(*v, (start[i] + eta * slack[i]).max(0.0));
        }
    }

    #[test]
    fn attacks_stay_in_ball_and_box(
        x in prop::collection::vec(-1.0..1.0f64, 2),
        w in prop::collection::vec(-2.0..2.0f64, 3),
        epsilon in 0.0..0.8f64,
        pgd in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let model = ModelState::new(Architecture::logistic(2), w).unwrap();
        let loss = LossSpec::cross_entropy(1e-4).unwrap();
        let sample = Sample::new(x.clone(), Label::Class(1));
        let cfg = if pgd { AttackConfig::pgd_train(epsilon) } else { AttackConfig::fgsm(epsilon) };
        let cfg = cfg.with_seed(seed).with_box(vec![(-1.0, 1.0), (-1.0, 1.0)]);
        let adv = perturb(&model, &loss, &sample, &cfg).unwrap();
        for (a, c) in adv.features.iter().zip(&x) {
            prop_assert!((a - c).abs() <= epsilon + 1e-12);
            prop_assert!((-1.0..=1.0).contains(a));
        }
        let clean = loss.eval(&model.predict(&x).unwrap(), &sample.label).unwrap();
        let attacked = loss.eval(&model.predict(&adv.features).unwrap(), &sample.label).unwrap();
        prop_assert!(attacked >= clean);
    }

    #[test]
    fn surrogate_brackets_indicator(g in -1.0..1.0f64, slope in 1.0..30.0f64, tau in 0.0..1.0f64) {
        let s = sigmoid_surrogate(g, slope).unwrap();
        let ind = indicator_rate_loss(g);
        if g >= 0.0 { prop_assert!(s <= ind); } else { prop_assert!(s >= ind); }
        if g.abs() >= tau {
            prop_assert!((s - ind).abs() <= 1.0 - sigmoid_surrogate(tau, slope).unwrap() + 1e-15);
        }
        let above = sigmoid_surrogate(g + 0.01, slope).unwrap();
        prop_assert!(above >= s);
    }

    #[test]
    fn group_split_partitions_the_data(
        samples in samples_strategy(1, 30),
        picks in prop::collection::vec(0usize..4, 30),
    ) {
        let n = samples.len();
        let groups: Vec<String> = picks[..n].iter().map(|g| format!("g{g}")).collect();
        let data = Dataset::new("d", samples).unwrap();
        let parts = group_split(&data, &groups).unwrap();
        prop_assert_eq!(parts.values().map(Dataset::len).sum::<usize>(), n);
        for (g, view) in &parts {
            let expected: Vec<Sample> = data
                .iter()
                .zip(&groups)
                .filter(|(_, h)| *h == g)
                .map(|(s, _)| s.clone())
                .collect();
            prop_assert_eq!(view.to_vec(), expected);
        }
    }

    #[test]
    fn model_text_roundtrips(
        widths in prop::collection::vec(1usize..5, 2..5),
        seed in any::<u64>(),
        scale in -1e3..1e3f64,
    ) {
        let arch = Architecture::mlp(
            widths,
            duallearn::models::Activation::Tanh,
            duallearn::models::OutputHead::Identity,
        );
        let mut model = ModelState::init(arch, seed).unwrap();
        model.params.iter_mut().enumerate().for_each(|(i, p)| *p = *p * scale + i as f64 * 1e-7);
        prop_assert_eq!(parse_model(&write_model(&model)).unwrap(), model);
    }

    #[test]
    fn csv_roundtrips(rows in prop::collection::vec((-1e6..1e6f64, -1.0..1.0f64, 0usize..3), 1..20)) {
        let samples = rows.iter().map(|r| Sample::new(vec![r.0, r.1], Label::Class(r.2))).collect();
        let loaded = LoadedCsv {
            dataset: Dataset::new("t", samples).unwrap(),
            feature_names: vec!["a".into(), "b".into()],
            groups: Some(rows.iter().map(|r| format!("g{}", r.2)).collect()),
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, &loaded, "y", Some("grp")).unwrap();
        let back = parse_csv(buf.as_slice(), "t", &CsvSchema::new("y").with_group("grp")).unwrap();
        prop_assert_eq!(back, loaded);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn training_is_deterministic_per_seed(
        samples in samples_strategy(2, 24),
        seed in any::<u64>(),
        threshold in 0.1..1.0f64,
    ) {
        let data = Dataset::new("d", samples).unwrap();
        let problem = Problem::new(
            RiskTerm::new(LossSpec::squared(4.0).unwrap(), data.clone()),
            vec![ConstraintSpec::new(RiskTerm::new(LossSpec::absolute_score(3.0).unwrap(), data), threshold)],
        ).unwrap();
        let inner = InnerSolverConfig::gradient(2, Some(5), OptimizerConfig::adam(0.05));
        let mut config = TrainConfig::new(15, 0.3, inner);
        config.seed = seed;
        let init = ModelState::zeros(Architecture::linear(2, 1, true)).unwrap();
        let a = train(&problem, &config, &init).unwrap();
        let b = train(&problem, &config, &init).unwrap();
        prop_assert_eq!(trace_jsonl(&a.trace).unwrap(), trace_jsonl(&b.trace).unwrap());
        prop_assert_eq!(&a.model, &b.model);
        let lines = parse_trace(&trace_jsonl(&a.trace).unwrap()).unwrap();
        prop_assert_eq!(lines.len(), 15);
        for (line, rec) in lines.iter().zip(&a.trace.records) {
            prop_assert_eq!(&line.mu, &rec.mu);
            prop_assert_eq!(line.lagrangian, rec.lagrangian);
        }
        let floor = -config.dual_step * problem.slack_bound_sq_sum() / 2.0;
        prop_assert!(a.trace.ergodic_complementary_slackness() >= floor - 1e-9);
    }
}
