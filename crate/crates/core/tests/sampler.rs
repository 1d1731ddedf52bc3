use nalgebra::DMatrix;
use treg::codec::LatentCodec;
use treg::error::TregError;
use treg::negation::{EmbeddingParams, EmbeddingState};
use treg::operators::{ForwardOperator, Measurement, OperatorKind};
use treg::prior::{Component, Concept, ConceptPrior, NullMode};
use treg::sampler::{self, Branch, Problem, RunOptions, SolverConfig, Stochasticity};
use treg::schedule::NoiseSchedule;

struct Toy {
    sched: NoiseSchedule,
    prior: ConceptPrior,
    codec: LatentCodec,
    op: ForwardOperator,
    emb: EmbeddingState,
    meas: Measurement,
}

impl Toy {
    fn new(concepts: Vec<Concept>, d: usize) -> Self {
        let prior = ConceptPrior::new(d, concepts, NullMode::UniformMarginal).unwrap();
        let codec = LatentCodec::from_encoder(DMatrix::identity(d, d), 0.0).unwrap();
        let op = ForwardOperator::new(OperatorKind::BoxInpaint { mask: vec![1; d] }, 1, d).unwrap();
        let emb = EmbeddingState::new(&EmbeddingParams { q: 1, ..Default::default() }, &prior, &codec).unwrap();
        let meas = Measurement { y: vec![0.0; d], sigma0: 0.1, op_id: op.id(), seed: 0 };
        Self { sched: NoiseSchedule::default(), prior, codec, op, emb, meas }
    }

    fn problem(&self) -> Problem<'_> {
        Problem { sched: &self.sched, prior: &self.prior, codec: &self.codec, op: &self.op, embedding: &self.emb }
    }
}

fn gaussian(mean: f64, var: f64) -> Vec<Concept> {
    vec![Concept { label: "g".into(), components: vec![Component { weight: 1.0, mean: vec![mean], var }] }]
}

fn plain_ddim() -> SolverConfig {
    SolverConfig { gamma_tmax: 0, stochasticity: Stochasticity::Deterministic, ..SolverConfig::default() }
}

fn final_from(toy: &Toy, z_t: f64) -> f64 {
    let opts = RunOptions { initial_latent: Some(vec![z_t]), ..Default::default() };
    sampler::run_with(&plain_ddim(), &toy.problem(), &toy.meas, None, &opts).unwrap().z_final[0]
}

#[test]
fn deterministic_ddim_on_a_gaussian_is_the_predicted_affine_map() {
    let (mu, v) = (2.0, 0.25);
    let toy = Toy::new(gaussian(mu, v), 1);
    // Each step maps u = z - sqrt(abar) mu to
    // u (sqrt(abar' abar) v + sqrt((1 - abar')(1 - abar))) / (abar v + 1 - abar).
    let steps = toy.sched.subsample_steps(200).unwrap();
    let mut gain = 1.0;
    for (i, &t) in steps.iter().enumerate() {
        let a = toy.sched.alpha_bar(t);
        let ap = toy.sched.alpha_bar(steps.get(i + 1).copied().unwrap_or(0));
        gain *= ((ap * a).sqrt() * v + ((1.0 - ap) * (1.0 - a)).sqrt()) / (a * v + 1.0 - a);
    }
    let (z0, z1) = (final_from(&toy, 0.0), final_from(&toy, 1.0));
    assert!((z1 - z0 - gain).abs() < 1e-12);

    // Starting from N(0, 1) rather than the terminal marginal biases the mean.
    let abar_t = toy.sched.alpha_bar(1000);
    let bias = z0 - mu;
    assert!((bias + gain * abar_t.sqrt() * mu).abs() < 1e-12);
    // Each discrete ratio is at most the exact flow ratio s'/s, so the
    // gain sits slightly below std / s_T.
    let exact = v.sqrt() / (abar_t * v + 1.0 - abar_t).sqrt();
    assert!(gain <= exact && gain / exact > 0.97);
}

#[test]
fn runs_are_reproducible_and_seed_dependent() {
    let toy = Toy::new(gaussian(0.5, 0.3), 1);
    let cfg = SolverConfig { seed: 9, gamma_tmax: 850, ..SolverConfig::default() };
    let a = sampler::run(&cfg, &toy.problem(), &toy.meas, Some("g")).unwrap();
    let b = sampler::run(&cfg, &toy.problem(), &toy.meas, Some("g")).unwrap();
    assert_eq!(a.z_final[0].to_bits(), b.z_final[0].to_bits());
    assert_eq!(a.trace, b.trace);
    let c = sampler::run(&SolverConfig { seed: 10, ..cfg }, &toy.problem(), &toy.meas, Some("g")).unwrap();
    assert_ne!(a.z_final, c.z_final);
}

#[test]
fn trace_has_one_finite_record_per_step() {
    let toy = Toy::new(gaussian(0.5, 0.3), 1);
    let cfg = SolverConfig { nfe: 50, ..SolverConfig::default() };
    let out = sampler::run(&cfg, &toy.problem(), &toy.meas, Some("g")).unwrap();
    let steps = toy.sched.subsample_steps(50).unwrap();
    assert_eq!(out.trace.records.iter().map(|r| r.t).collect::<Vec<_>>(), steps);
    for r in &out.trace.records {
        assert!(r.data_consistency.is_finite() && r.dsm_loss.is_finite() && r.null_similarity.is_finite());
        assert_eq!(r.branch == Branch::Gamma, cfg.in_gamma(r.t));
    }
}

#[test]
fn divergence_is_reported_with_the_step() {
    let concepts = vec![
        Concept { label: "a".into(), components: vec![Component { weight: 1.0, mean: vec![5.0], var: 0.01 }] },
        Concept { label: "b".into(), components: vec![Component { weight: 1.0, mean: vec![-5.0], var: 0.01 }] },
    ];
    let toy = Toy::new(concepts, 1);
    let cfg = SolverConfig { omega1: 1e9, ..plain_ddim() };
    match sampler::run(&cfg, &toy.problem(), &toy.meas, Some("a")) {
        Err(TregError::Diverged { step, t }) => assert_eq!(toy.sched.subsample_steps(200).unwrap()[step], t),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn rejects_incompatible_configurations() {
    let toy = Toy::new(gaussian(0.7, 1.0), 1);
    let p = toy.problem();
    let bad_stoch = SolverConfig { stochasticity: Stochasticity::Custom(vec![0.0; 3]), ..SolverConfig::default() };
    assert!(sampler::run(&bad_stoch, &p, &toy.meas, None).unwrap_err().is_config());
    let bad_gamma = SolverConfig { gamma_tmax: 1001, ..SolverConfig::default() };
    assert!(sampler::run(&bad_gamma, &p, &toy.meas, None).is_err());
    assert!(matches!(
        sampler::run(&SolverConfig::default(), &p, &toy.meas, Some("nope")),
        Err(TregError::UnknownConcept(_))
    ));
    let short = Measurement { y: vec![], ..toy.meas.clone() };
    assert!(sampler::run(&SolverConfig::default(), &p, &short, None).is_err());
}

#[test]
fn phase_retrieval_requires_adam() {
    let concepts = gaussian(0.7, 1.0);
    let mut toy = Toy::new(concepts, 1);
    toy.op = ForwardOperator::new(OperatorKind::PhaseRetrieval { pad: 1 }, 1, 1).unwrap();
    toy.meas.y = vec![0.0; toy.op.out_dim()];
    let err = sampler::run(&SolverConfig::default(), &toy.problem(), &toy.meas, None).unwrap_err();
    assert!(err.is_config());
    let cfg = SolverConfig { use_adam: true, dps_enabled: true, nfe: 20, gamma_mod: 10, gamma_tmax: 1000, ..SolverConfig::default() };
    assert!(sampler::run(&cfg, &toy.problem(), &toy.meas, Some("g")).is_ok());
}
