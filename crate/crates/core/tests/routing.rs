mod common;

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use common::{orchestrator, runtime, Mode};
use dialhub_core::dialog_state::SlotSchema;
use dialhub_core::{DialogStore, Health, OrchestratorError, SystemId};
use proptest::prelude::*;

const SYSTEMS: &[(&str, &str)] =
    &[("wx-1", "weather"), ("wx-2", "weather"), ("eat-1", "restaurant"), ("eat-2", "restaurant"), ("play", "game")];

const UTTERANCES: &[&str] = &[
    "what is the weather in Pittsburgh",
    "how about Cambridge tomorrow",
    "find me a restaurant",
    "I am hungry, somewhere for dinner in Boston",
    "let's play a game",
    "is it going to rain on friday",
    "ok",
    "tell me more",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// A slot set earlier keeps its value in the next request unless the
    /// current utterance rewrites it, including on hand-off turns.
    #[test]
    fn slots_survive_hand_off(script in prop::collection::vec(0..UTTERANCES.len(), 1..12), seed in any::<u64>()) {
        let rt = runtime();
        let (orch, mock) = orchestrator(Arc::new(DialogStore::in_memory()), SYSTEMS, seed);
        let extractor = SlotSchema::default().compile().unwrap();
        let s = orch.start_session(HashMap::new()).unwrap();
        let mut hand_offs = 0;
        for &u in &script {
            let text = UTTERANCES[u];
            let before = orch.session(&s.session_id).unwrap().state;
            let calls_before = mock.calls().len();
            let out = rt.block_on(orch.handle_utterance(s.session_id, text)).unwrap();
            hand_offs += usize::from(out.handed_off);
            let (to, request) = mock.calls()[calls_before].clone();
            prop_assert_eq!(&to, &out.responder);
            let rewritten = extractor.extract(text);
            for (slot, value) in &before.slots {
                if !rewritten.contains_key(slot) {
                    prop_assert_eq!(request.dialog_state.slots.get(slot), Some(value));
                }
            }
            for (slot, value) in &rewritten {
                prop_assert_eq!(request.dialog_state.get(slot), Some(value.as_str()));
            }
        }
        let session = orch.session(&s.session_id).unwrap();
        prop_assert_eq!(session.turns.len(), script.len());
        prop_assert!(hand_offs <= script.len());
    }

    /// Completed turns append exactly one turn, failed ones none, and no
    /// attempt ever goes to a DOWN system or retries one that already failed.
    #[test]
    fn failover_respects_health(
        steps in prop::collection::vec((0..UTTERANCES.len(), prop::collection::vec(any::<bool>(), SYSTEMS.len())), 1..15),
        seed in any::<u64>(),
    ) {
        let rt = runtime();
        let (orch, mock) = orchestrator(Arc::new(DialogStore::in_memory()), SYSTEMS, seed);
        let s = orch.start_session(HashMap::new()).unwrap();
        for (u, failing) in steps {
            for ((id, _), fail) in SYSTEMS.iter().zip(&failing) {
                mock.set(id, if *fail { Mode::Fail } else { Mode::Echo });
            }
            let down: BTreeSet<SystemId> = SYSTEMS
                .iter()
                .map(|(id, _)| SystemId::new(*id))
                .filter(|id| orch.registry().health(id) == Some(Health::Down))
                .collect();
            let turns_before = orch.session(&s.session_id).unwrap().turns.len();
            let calls_before = mock.calls().len();
            let result = rt.block_on(orch.handle_utterance(s.session_id, UTTERANCES[u]));
            let attempted: Vec<SystemId> = mock.calls()[calls_before..].iter().map(|(id, _)| id.clone()).collect();
            let distinct: BTreeSet<&SystemId> = attempted.iter().collect();
            prop_assert_eq!(distinct.len(), attempted.len(), "a system was tried twice: {:?}", attempted);
            prop_assert!(attempted.iter().all(|id| !down.contains(id)), "tried a DOWN system: {:?}", attempted);
            let turns_after = orch.session(&s.session_id).unwrap().turns.len();
            match result {
                Ok(out) => {
                    prop_assert_eq!(turns_after, turns_before + 1);
                    prop_assert!(!down.contains(&out.responder));
                    if out.failover_used && !out.topic_changed {
                        prop_assert!(attempted.len() >= 2);
                        prop_assert_eq!(attempted.last(), Some(&out.responder));
                    }
                }
                Err(OrchestratorError::AllSystemsFailed) => prop_assert_eq!(turns_after, turns_before),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}

#[test]
fn concurrent_sessions_do_not_block_each_other() {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_time().build().unwrap();
    let (orch, _) = orchestrator(Arc::new(DialogStore::in_memory()), SYSTEMS, 3);
    let orch = Arc::new(orch);
    rt.block_on(async {
        let mut handles = Vec::new();
        for i in 0..32 {
            let orch = orch.clone();
            handles.push(tokio::spawn(async move {
                let s = orch.start_session(HashMap::new()).unwrap();
                for j in 0..5 {
                    orch.handle_utterance(s.session_id, &format!("message {i} {j}")).await.unwrap();
                }
                s.session_id
            }));
        }
        for h in handles {
            let id = h.await.unwrap();
            let session = orch.session(&id).unwrap();
            assert_eq!(session.turns.len(), 5);
            assert!(session.turns.iter().enumerate().all(|(j, t)| t.user.text.ends_with(&format!(" {j}"))));
        }
    });
    assert_eq!(orch.store().session_count(), 32);
}
