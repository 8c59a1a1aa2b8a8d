use callsense_core::backends::oracle::normalize_text;
use callsense_core::backends::rule_oracle_annotate;
use callsense_core::context::{render_post_call_input, ContextPolicy, RequestBuilder};
use callsense_core::simulator::noise::NoiseProfile;
use callsense_core::simulator::{generate_corpus, CorpusConfig};

fn heavy() -> NoiseProfile {
    NoiseProfile {
        disfluency_rate: 1.0,
        overlap_rate: 1.0,
        fragment_rate: 1.0,
        noise_marker_rate: 1.0,
    }
}

fn assert_recovers(noise: &NoiseProfile, per_type: usize, seed: u64) {
    let corpus = generate_corpus(&CorpusConfig::uniform(per_type), noise, seed).unwrap();
    let mut checked = 0;
    for call in &corpus {
        let conv = &call.conversation;
        for (i, request) in render_post_call_input(conv).iter().enumerate() {
            let gold = conv.turns[i].gold.as_ref().unwrap();
            let got = rule_oracle_annotate(request);
            assert_eq!(
                &got, gold,
                "{} turn {i}: {:?} (normalized {:?})",
                conv.conversation_id,
                conv.turns[i].text,
                normalize_text(&conv.turns[i].text)
            );
            checked += 1;
        }
    }
    assert!(checked > per_type * 5 * 10);
}

#[test]
fn oracle_recovers_gold_without_noise() {
    assert_recovers(&NoiseProfile::none(), 60, 11);
}

#[test]
fn oracle_recovers_gold_under_moderate_noise() {
    assert_recovers(&NoiseProfile::moderate(), 200, 1_000);
}

#[test]
fn oracle_recovers_gold_under_every_phenomenon() {
    assert_recovers(&heavy(), 100, 77);
}

#[test]
fn oracle_recovers_gold_with_one_turn_of_context() {
    let corpus = generate_corpus(&CorpusConfig::uniform(30), &NoiseProfile::moderate(), 5).unwrap();
    let builder = RequestBuilder::default();
    for call in &corpus {
        let conv = &call.conversation;
        for i in 0..conv.turns.len() {
            let request = builder.build_context(conv, i, ContextPolicy::LastKTurns(1)).unwrap();
            assert_eq!(Some(&rule_oracle_annotate(&request)), conv.turns[i].gold.as_ref());
        }
    }
}
