use callsense_core::aggregation::{aggregate_call, expected_outcome, FinalOutcome};
use callsense_core::model::TurnAnnotation;
use callsense_core::simulator::noise::NoiseProfile;
use callsense_core::simulator::{generate_corpus, CorpusConfig};

#[test]
fn gold_aggregates_to_the_scenario_outcome() {
    let corpus = generate_corpus(&CorpusConfig::uniform(150), &NoiseProfile::moderate(), 40).unwrap();
    for call in &corpus {
        let gold: Vec<TurnAnnotation> = call
            .conversation
            .turns
            .iter()
            .map(|t| t.gold.clone().unwrap())
            .collect();
        let record = aggregate_call(&call.conversation, &gold).unwrap();
        let expected = expected_outcome(call.scenario.scenario_type);
        assert_eq!(record.final_outcome, expected, "{}", call.conversation.conversation_id);
        assert_eq!(record.promise.is_some(), expected == FinalOutcome::PaymentCommitted);
        if let Some(promise) = &record.promise {
            assert!(promise.amount.minor_units <= call.scenario.persona.total_debt.minor_units);
            assert!(promise.date > call.scenario.call_date);
        }
        assert_eq!(record.stage_trace.len(), call.conversation.turns.len());
    }
}
