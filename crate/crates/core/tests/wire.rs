use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use blicket_core::environment::{assign_roles, Condition};
use blicket_core::harness::{run_episode, EpisodeOptions, Scaffolding, Tier};
use blicket_core::monitor::{condense, BehaviorId, BehaviorSet, ExplorationFeatures, HeuristicEvaluator, TriggerEvaluator};
use blicket_core::wire::{ExternalEvaluator, ExternalPolicy};
use serde_json::Value;

/// Minimal HTTP server answering every request with `reply`, after `delay`.
fn serve(reply: &'static str, delay: Duration) -> (String, Arc<Mutex<Vec<Value>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(serde_json::from_slice(&body).unwrap());
            thread::sleep(delay);
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                reply.len(),
                reply
            );
        }
    });
    (url, seen)
}

fn episode(policy: &mut ExternalPolicy, tier: Tier) -> blicket_core::trace::EpisodeTrace {
    let config = assign_roles(Condition::Conjunctive, 3, 4).unwrap();
    run_episode(&config, &Scaffolding::shipped(tier), policy, &HeuristicEvaluator, &EpisodeOptions::default()).unwrap().trace
}

#[test]
fn loopback_policy_answers_in_one_step() {
    let (url, seen) = serve("ACTION: check\nRULE_TYPE: conjunctive\nBLICKETS: A", Duration::ZERO);
    let mut policy = ExternalPolicy::new(url, Duration::from_secs(10));
    let t = episode(&mut policy, Tier::Cg);
    assert_eq!(t.steps.len(), 1);
    let answer = t.final_answer.as_ref().unwrap();
    assert_eq!(answer.claimed_blickets, "A".parse().unwrap());
    let req = &seen.lock().unwrap()[0];
    assert_eq!(req["kind"], "policy");
    assert!(req["system"].as_str().unwrap().contains("=== Context Graph ==="));
    assert_eq!(req["messages"][0]["role"], "user");
    assert_eq!(req["metadata"]["step"], 1);
    assert_eq!(req["metadata"]["available_actions"].as_array().unwrap().len(), 7);
}

#[test]
fn empty_body_is_a_parse_failure() {
    let (url, _) = serve("", Duration::ZERO);
    let mut policy = ExternalPolicy::new(url, Duration::from_secs(10));
    let t = episode(&mut policy, Tier::Base);
    assert!(!t.steps[0].parsed.parse_ok);
    assert_eq!(t.parse_failures as usize, t.steps.len());
    assert!(t.final_answer.is_none());
}

#[test]
fn unreachable_endpoint_aborts() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut policy = ExternalPolicy::new(format!("http://127.0.0.1:{port}/"), Duration::from_secs(2));
    let t = episode(&mut policy, Tier::Base);
    assert!(t.aborted);
    assert!(t.steps.is_empty());
    assert!(t.abort_reason.is_some());
}

#[test]
fn slow_endpoint_times_out() {
    let (url, _) = serve("ACTION: check\nRULE_TYPE: conjunctive\nBLICKETS: A", Duration::from_millis(1500));
    let mut policy = ExternalPolicy::new(url, Duration::from_millis(200));
    let t = episode(&mut policy, Tier::Base);
    assert!(t.aborted);
    assert!(t.abort_reason.as_deref().unwrap().contains("timed out"), "{:?}", t.abort_reason);
}

#[test]
fn loopback_evaluator_scores() {
    let (url, seen) = serve("7.5 the evidence points that way", Duration::ZERO);
    let evaluator = ExternalEvaluator::new(url, Duration::from_secs(10));
    let set = BehaviorSet::shipped();
    let spec = set.spec(BehaviorId::RuleChangeHypothesis).unwrap();
    let ctx = condense(&[], "COMBINATION_TESTING", &ExplorationFeatures::default());
    assert_eq!(evaluator.score(&set, spec, &ctx).unwrap(), 7.5);
    let req = &seen.lock().unwrap()[0];
    assert_eq!(req["kind"], "evaluator");
    assert_eq!(req["metadata"]["behavior_id"], "rule_change_hypothesis");
    assert_eq!(req["metadata"]["current_state"], "COMBINATION_TESTING");
}
