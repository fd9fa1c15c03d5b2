//! Randomized property tests for the numeric core: identities the
//! transforms must satisfy for any input, structural invariants of corpus
//! generation and splitting, and distributional guarantees of the mixture
//! network outputs.

use proptest::prelude::*;

use prosody_mi::corpus::split_corpus;
use prosody_mi::estimator::{estimate_entropy, jonckheere_test, UncertaintyConfig};
use prosody_mi::mdn::{MdnModel, TrainConfig, VARIANCE_FLOOR};
use prosody_mi::pitch::{dct4, idct4, PitchCurve, ProsodyVector, CURVE_POINTS, VECTOR_DIM};
use prosody_mi::synth::{generate, standard_tone_means, SynthSpec};
use prosody_mi::ProsodicType;

fn curve_samples() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-500.0..500.0f64, CURVE_POINTS)
}

fn small_spec() -> impl Strategy<Value = SynthSpec> {
    (
        1..4usize,
        0.0..8.0f64,
        0.5..2.0f64,
        1..6usize,
        0.0..=1.0f64,
        1..8usize,
        2..30usize,
        any::<u64>(),
    )
        .prop_map(
            |(n_tones, sep, stddev, lexicon, leak, tokens, sentences, seed)| SynthSpec {
                n_tones,
                tone_means: standard_tone_means(n_tones, sep),
                tone_stddevs: vec![[stddev; VECTOR_DIM]; n_tones],
                lexicon_size: lexicon,
                leak,
                word_weights: None,
                tokens_per_sentence: tokens,
                n_sentences: sentences,
                seed,
                language: "prop".to_string(),
                prosodic_type: ProsodicType::Tonal,
            },
        )
}

proptest! {
    /// Projecting a curve onto the four-coefficient subspace and back is
    /// idempotent, and the kept coefficient energy never exceeds the
    /// curve energy (orthonormal basis ⇒ Bessel's inequality).
    #[test]
    fn dct_idct_is_an_orthogonal_projection(samples in curve_samples()) {
        let curve = PitchCurve::from_samples(&samples).unwrap();
        let v = dct4(&curve);

        let curve_energy: f64 = samples.iter().map(|x| x * x).sum();
        let coeff_energy: f64 = v.as_slice().iter().map(|c| c * c).sum();
        prop_assert!(coeff_energy <= curve_energy * (1.0 + 1e-12) + 1e-9);

        let once = idct4(&v, CURVE_POINTS).unwrap();
        let again = idct4(&dct4(&PitchCurve::from_samples(&once).unwrap()), CURVE_POINTS).unwrap();
        for (a, b) in once.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    /// The transform is linear.
    #[test]
    fn dct_is_linear(
        xs in curve_samples(),
        ys in curve_samples(),
        a in -10.0..10.0f64,
    ) {
        let combined: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| a * x + y).collect();
        let vc = dct4(&PitchCurve::from_samples(&combined).unwrap());
        let vx = dct4(&PitchCurve::from_samples(&xs).unwrap());
        let vy = dct4(&PitchCurve::from_samples(&ys).unwrap());
        for k in 0..VECTOR_DIM {
            let expect = a * vx.as_slice()[k] + vy.as_slice()[k];
            prop_assert!((vc.as_slice()[k] - expect).abs() < 1e-6);
        }
    }

    /// A constant curve carries all its mass on the first coefficient and
    /// reconstructs exactly.
    #[test]
    fn constant_curves_map_to_the_first_coefficient(c in -400.0..400.0f64) {
        let samples = vec![c; CURVE_POINTS];
        let v = dct4(&PitchCurve::from_samples(&samples).unwrap());
        let tol = 1e-9 * c.abs().max(1.0);
        prop_assert!((v.as_slice()[0] - (CURVE_POINTS as f64).sqrt() * c).abs() < tol);
        for k in 1..VECTOR_DIM {
            prop_assert!(v.as_slice()[k].abs() < tol);
        }
        let back = idct4(&v, CURVE_POINTS).unwrap();
        for x in back {
            prop_assert!((x - c).abs() < tol);
        }
    }

    /// Splitting a corpus yields a deterministic partition of its
    /// utterances with both sides non-empty.
    #[test]
    fn corpus_split_is_a_seeded_partition(
        spec in small_spec(),
        frac in 0.1..0.9f64,
        seed in any::<u64>(),
    ) {
        let corpus = generate(&spec).unwrap().corpus;
        let (train, eval) = split_corpus(&corpus, frac, seed).unwrap();
        prop_assert!(!train.utterances.is_empty());
        prop_assert!(!eval.utterances.is_empty());

        let mut ids: Vec<&str> = train
            .utterances
            .iter()
            .chain(&eval.utterances)
            .map(|u| u.utterance_id.as_str())
            .collect();
        ids.sort_unstable();
        let mut all: Vec<&str> = corpus
            .utterances
            .iter()
            .map(|u| u.utterance_id.as_str())
            .collect();
        all.sort_unstable();
        prop_assert_eq!(ids, all, "split must partition the utterances");

        let (train2, eval2) = split_corpus(&corpus, frac, seed).unwrap();
        prop_assert_eq!(train, train2);
        prop_assert_eq!(eval, eval2);
    }

    /// Generated corpora have exactly the promised shape: every sentence
    /// carries `tokens_per_sentence` words, every word form comes from the
    /// lexicon, and every token has a cached pitch vector.
    #[test]
    fn generated_corpora_have_consistent_shape(spec in small_spec()) {
        let synth = generate(&spec).unwrap();
        prop_assert_eq!(synth.corpus.utterances.len(), spec.n_sentences);
        prop_assert_eq!(
            synth.corpus.n_tokens(),
            spec.tokens_per_sentence * spec.n_sentences
        );
        prop_assert_eq!(synth.cache.len(), synth.corpus.n_tokens());

        let forms: Vec<String> = spec.word_forms();
        for utt in &synth.corpus.utterances {
            prop_assert_eq!(utt.words.len(), spec.tokens_per_sentence);
            for word in &utt.words {
                prop_assert!(forms.contains(&word.form));
                prop_assert!(synth.cache.get(&utt.utterance_id, word.index).is_some());
            }
        }
    }

    /// Mixture heads always emit a probability simplex and variances at or
    /// above the floor, for any parameters and any input.
    #[test]
    fn mixture_outputs_live_on_the_simplex_with_floored_variances(
        kernels in 1..4usize,
        hidden_units in 1..8usize,
        hidden_layers in 1..3usize,
        input_dim in 1..6usize,
        seed in any::<u64>(),
        h_raw in prop::collection::vec(-3.0..3.0f64, 1..6),
    ) {
        let config = TrainConfig {
            kernels,
            hidden_units,
            hidden_layers,
            seed,
            ..TrainConfig::default()
        };
        let model = MdnModel::new(input_dim, &config).unwrap();
        let mut h = h_raw;
        h.resize(input_dim, 0.0);
        let params = model.forward(&h).unwrap();

        prop_assert_eq!(params.weights.len(), kernels);
        let total: f64 = params.weights.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for w in &params.weights {
            prop_assert!(*w >= 0.0);
        }
        for var in &params.variances {
            for v in var {
                prop_assert!(*v >= VARIANCE_FLOOR);
            }
        }
    }

    /// Mean surprisal does not depend on the order of the held-out items.
    #[test]
    fn entropy_is_permutation_invariant(
        values in prop::collection::vec(-10.0..10.0f64, 1..200),
        rotate in 0..200usize,
    ) {
        let cfg = UncertaintyConfig { bootstrap_resamples: 0, seed: 0 };
        let base = estimate_entropy(|x: &f64| *x, &values, "id", &cfg).unwrap();
        let mut shifted = values.clone();
        shifted.rotate_left(rotate % values.len());
        let moved = estimate_entropy(|x: &f64| *x, &shifted, "id", &cfg).unwrap();
        prop_assert!((base.nats - moved.nats).abs() < 1e-9);
        prop_assert_eq!(base.stderr, 0.0);
    }

    /// Reversing the hypothesized group order complements the trend
    /// statistic: ties split evenly, so the two directions sum to the
    /// total number of cross-group pairs.
    #[test]
    fn trend_statistic_respects_reversal_symmetry(
        sizes in prop::collection::vec(1..8usize, 2..5),
        raw in prop::collection::vec(0..5i32, 2 * 8 * 5),
    ) {
        let mut cursor = raw.into_iter();
        let groups: Vec<(String, Vec<f64>)> = sizes
            .iter()
            .enumerate()
            .map(|(g, &len)| {
                let values = (0..len).map(|_| cursor.next().unwrap() as f64).collect();
                (format!("g{g}"), values)
            })
            .collect();
        let reversed: Vec<(String, Vec<f64>)> = groups.iter().rev().cloned().collect();

        let forward = jonckheere_test(&groups, 10, 0).unwrap();
        let backward = jonckheere_test(&reversed, 10, 0).unwrap();

        let mut cross_pairs = 0usize;
        for a in 0..sizes.len() {
            for b in (a + 1)..sizes.len() {
                cross_pairs += sizes[a] * sizes[b];
            }
        }
        prop_assert_eq!(forward.statistic + backward.statistic, cross_pairs as f64);
    }

    /// Pitch vectors survive JSON serialization bit-exactly.
    #[test]
    fn vectors_round_trip_through_json_bitwise(
        raw in prop::collection::vec(-1e9..1e9f64, VECTOR_DIM),
    ) {
        let mut coeffs = [0.0; VECTOR_DIM];
        coeffs.copy_from_slice(&raw);
        let v = ProsodyVector(coeffs);
        let text = serde_json::to_string(&v).unwrap();
        let back: ProsodyVector = serde_json::from_str(&text).unwrap();
        for (a, b) in v.as_slice().iter().zip(back.as_slice()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
