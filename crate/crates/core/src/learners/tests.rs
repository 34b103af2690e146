use super::*;
use crate::stream::{build_stream, DriftSchedule, StreamSource, StreamSpec};

const DIMS: [usize; 3] = [6, 12, 4];

fn stream(steps: u64, seed: u64) -> Vec<LabeledBatch> {
    build_stream(&StreamSpec {
        source: StreamSource::Synthetic(DriftSchedule::stationary(1.0)),
        steps,
        batch_size: 5,
        feature_dim: DIMS[0],
        classes: DIMS[2],
        seed,
    })
    .unwrap()
    .collect()
}

fn trajectory(spec: LearnerSpec, batches: &[LabeledBatch]) -> Vec<Vec<f64>> {
    let mut l = Learner::new(spec, &DIMS, 20, 7).unwrap();
    batches
        .iter()
        .map(|b| {
            l.train(b).unwrap();
            l.params.to_flat()
        })
        .collect()
}

#[test]
fn same_seed_same_init_across_methods() {
    let inits: Vec<_> = Method::ALL
        .iter()
        .map(|&m| {
            Learner::new(LearnerSpec::with_default_lr(m), &DIMS, 10, 3)
                .unwrap()
                .params
                .to_flat()
        })
        .collect();
    assert!(inits.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn polrs_copy_lrs() {
    let l = Learner::new(LearnerSpec::new(Method::Polrs, 1e-3), &DIMS, 10, 0).unwrap();
    assert_eq!(l.polrs_lrs(), Some([5e-4, 1e-3, 2e-3]));
}

#[test]
fn rwalk_penalty_zero_at_anchor() {
    let l = Learner::new(LearnerSpec::new(Method::Rwalk, 1e-2), &DIMS, 10, 0).unwrap();
    assert_eq!(l.rwalk_penalty(), Some(0.0));
}

#[test]
fn rwalk_importance_stays_nonnegative() {
    let mut spec = LearnerSpec::new(Method::Rwalk, 5e-2);
    spec.rwalk.anchor_period = 7;
    let mut l = Learner::new(spec, &DIMS, 20, 1).unwrap();
    for b in stream(30, 4) {
        l.train(&b).unwrap();
        let (f, s) = l.rwalk_importance().unwrap();
        assert!(f.iter().chain(s).all(|v| *v >= 0.0));
        assert!(l.rwalk_penalty().unwrap() >= 0.0);
    }
}

#[test]
fn er_minus_fractional_cycle() {
    let spec = LearnerSpec::new(Method::ErMinus, 1e-2).with_gd_steps(Rational::new(4, 3).unwrap());
    let mut l = Learner::new(spec, &DIMS, 20, 0).unwrap();
    let mut realized = Vec::new();
    for b in stream(6, 0) {
        let before = l.gd_steps_done();
        l.train(&b).unwrap();
        realized.push(l.gd_steps_done() - before);
    }
    assert_eq!(realized, vec![1, 1, 2, 1, 1, 2]);
}

#[test]
fn reductions_match_er_bitwise() {
    let batches = stream(60, 11);
    let er = trajectory(LearnerSpec::new(Method::Er, 1e-2), &batches);

    let mut lwf = LearnerSpec::new(Method::Lwf, 1e-2);
    lwf.lwf.lambda = 0.0;
    let mut rwalk = LearnerSpec::new(Method::Rwalk, 1e-2);
    rwalk.rwalk.lambda = 0.0;
    let mut polrs = LearnerSpec::new(Method::Polrs, 1e-2);
    polrs.polrs.lr_factor = 1.0;
    polrs.polrs.window = 10;
    for spec in [lwf, rwalk, polrs] {
        let m = spec.method;
        assert_eq!(trajectory(spec, &batches), er, "{m} diverged from ER");
    }
}

#[test]
fn polrs_unit_factor_keeps_copies_identical() {
    let mut spec = LearnerSpec::new(Method::Polrs, 1e-2);
    spec.polrs.lr_factor = 1.0;
    let mut l = Learner::new(spec, &DIMS, 20, 2).unwrap();
    for b in stream(25, 2) {
        l.train(&b).unwrap();
        let c = l.polrs_copies().unwrap();
        assert!(c[0] == c[1] && c[1] == c[2]);
    }
}

#[test]
fn ace_masks_absent_stream_classes() {
    let stream_half =
        LabeledBatch::from_samples([(vec![0.0; 6], 0), (vec![1.0; 6], 1)], 1).unwrap();
    let memory_half = LabeledBatch::from_samples([(vec![2.0; 6], 3)], 0).unwrap();
    let combined = stream_half.concat(&memory_half).unwrap();
    let mask = Learner::ace_mask(&stream_half, &combined, 4);
    assert_eq!(
        mask,
        vec![true, true, false, false, true, true, false, false, true, true, true, true]
    );
    let params = MlpParams::init(&DIMS, 0).unwrap();
    let logits = nn::infer(&params, &combined.features).unwrap();
    let (_, d) = nn::loss_ce(&logits, &combined.labels, Some(&mask)).unwrap();
    for row in 0..2 {
        assert_eq!(&d.row(row)[2..], &[0.0, 0.0]);
    }
    assert!(d.row(2).iter().all(|v| *v != 0.0));
}

#[test]
fn buffer_holds_latest_stream_samples() {
    for m in Method::ALL {
        let mut l = Learner::new(LearnerSpec::with_default_lr(m), &DIMS, 100, 0).unwrap();
        let batches = stream(3, 5);
        for b in &batches {
            l.train(b).unwrap();
        }
        assert_eq!(l.buffer().len(), 15, "{m}");
    }
}

#[test]
fn gss_capacity_is_respected() {
    let mut l = Learner::new(LearnerSpec::with_default_lr(Method::Gss), &DIMS, 12, 0).unwrap();
    for b in stream(10, 5) {
        l.train(&b).unwrap();
        assert!(l.buffer().len() <= 12);
    }
}

#[test]
fn invalid_specs_rejected() {
    let mut s = LearnerSpec::new(Method::Er, 0.0);
    assert!(s.validate().is_err());
    s.lr = 1e-3;
    s.gd_steps_per_job = Rational::ZERO;
    assert!(s.validate().is_err());
    let mut p = LearnerSpec::new(Method::Polrs, 1e-3);
    p.polrs.lr_factor = 0.5;
    assert!(p.validate().is_err());
    let mut r = LearnerSpec::new(Method::Rwalk, 1e-3);
    r.rwalk.fisher_ema = 1.0;
    assert!(r.validate().is_err());
}

#[test]
fn non_finite_input_aborts() {
    let mut l = Learner::new(LearnerSpec::new(Method::Er, 1e-2), &DIMS, 10, 0).unwrap();
    let bad = LabeledBatch::from_samples([(vec![f64::NAN; 6], 0)], 1).unwrap();
    assert!(matches!(l.train(&bad), Err(Error::Numeric(_))));
}

#[test]
fn method_names_parse() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    assert!("sgd".parse::<Method>().is_err());
}

#[test]
fn complexity_self_ratio_is_one() {
    let probe = ProbeSetup::standard(&DIMS, 20, 0);
    let er = LearnerSpec::new(Method::Er, 5e-3);
    let m = measure_relative_complexity(&er, &er, &probe).unwrap();
    assert_eq!(m.ratio, 1.0);
    assert_eq!(m.reported, Some(Rational::ONE));
}

#[test]
fn gss_scheduling_rounds_down() {
    let measured = Rational::new(13, 2).unwrap();
    assert_eq!(Method::Gss.scheduling_cost(measured), Rational::integer(6));
    assert_eq!(
        Method::Mir.scheduling_cost(Rational::new(5, 2).unwrap()),
        Rational::new(5, 2).unwrap()
    );
}
