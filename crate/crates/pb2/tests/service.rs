mod common;

use std::thread;
use std::time::Duration;

use pb2::formats::{read_jsonl, PreferenceLine, TrajectoryRecord};
use pb2::human::{Hub, HumanTeacher};
use pb2::runner::{publish, run_seed};
use pb2::server::{QueryBody, Service, LABEL_SCHEMA};
use pb2_core::config::Algorithm;
use pb2_core::population::Experiment;
use pb2_core::rewardmodel::{Label, Segment, SegmentRef, TeacherTag};

fn client() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(10)))
        .build()
        .into()
}

fn get(url: &str) -> (u16, String) {
    let mut r = client().get(url).call().unwrap();
    let status = r.status().as_u16();
    (status, r.body_mut().read_to_string().unwrap_or_default())
}

fn post(url: &str, body: &str) -> (u16, String) {
    let mut r = client()
        .post(url)
        .header("Content-Type", "application/json")
        .send(body)
        .unwrap();
    let status = r.status().as_u16();
    (status, r.body_mut().read_to_string().unwrap_or_default())
}

fn seg(episode: u64, n: usize) -> Segment {
    let source = SegmentRef {
        agent_id: 1,
        episode,
        start: 0,
        len: n as u32,
    };
    let states: Vec<f32> = (0..n).flat_map(|i| [i as f32, 2.0 * i as f32]).collect();
    Segment::new(source, 2, 2, states, vec![0.0; 2 * n], -1.0).unwrap()
}

#[test]
fn status_is_idle_before_training() {
    let svc = Service::start(Hub::new(true), 0, None).unwrap();
    let (code, body) = get(&format!("{}/api/status", svc.url()));
    assert_eq!(code, 200);
    let v: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["state"], "idle");
    assert_eq!(v["pending_queries"], 0);
}

#[test]
fn busy_port_is_a_startup_error() {
    let svc = Service::start(Hub::new(false), 0, None).unwrap();
    let port = svc.addr().port();
    assert!(Service::start(Hub::new(false), port, None).is_err());
}

#[test]
fn query_and_label_contract() {
    let hub = Hub::new(true);
    let svc = Service::start(hub.clone(), 0, None).unwrap();
    let base = svc.url();
    assert_eq!(get(&format!("{base}/api/queries/next")).0, 204);

    let id = hub.enqueue(seg(0, 7), seg(1, 7), false);
    let (code, body) = get(&format!("{base}/api/queries/next"));
    assert_eq!(code, 200);
    let q: QueryBody = serde_json::from_str(&body).unwrap();
    assert_eq!(q.ticket_id, id);
    assert_eq!(q.seg0.len(), 7);
    assert_eq!(q.seg1[3], [3.0, 6.0]);
    assert!(!body.contains("gt") && !body.contains("return"), "{body}");

    let url = format!("{base}/api/queries/{id}/label");
    for bad in [
        "",
        "not json",
        r#"{"y":[1,1]}"#,
        r#"{"y":"left"}"#,
        r#"{"y":[1,0],"extra":1}"#,
        r#"{"label":[1,0]}"#,
    ] {
        let (code, body) = post(&url, bad);
        assert_eq!(code, 400, "{bad}");
        let v: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(v["error"], LABEL_SCHEMA);
    }
    assert_eq!(
        post(&format!("{base}/api/queries/999/label"), r#"{"y":[1,0]}"#).0,
        404
    );
    assert_eq!(post(&url, r#"{"y":[0.5,0.5]}"#).0, 200);
    assert_eq!(
        hub.lock().tickets.get(id).unwrap().answer,
        Some(Label::Equal)
    );
    assert_eq!(post(&url, r#"{"y":[1,0]}"#).0, 409);
    assert_eq!(get(&format!("{base}/api/queries/next")).0, 204);
}

#[test]
fn unknown_routes_and_methods() {
    let svc = Service::start(Hub::new(false), 0, None).unwrap();
    let base = svc.url();
    assert_eq!(get(&format!("{base}/api/nothing")).0, 404);
    assert_eq!(post(&format!("{base}/api/status"), "{}").0, 405);
    assert_eq!(get(&format!("{base}/api/queries/1/label")).0, 405);
}

#[test]
fn static_assets_are_served_from_the_asset_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<p>ui</p>").unwrap();
    std::fs::write(dir.path().join("app.js"), "console.log(1)").unwrap();
    let svc = Service::start(Hub::new(false), 0, Some(dir.path().to_path_buf())).unwrap();
    let base = svc.url();
    assert_eq!(get(&format!("{base}/")), (200, "<p>ui</p>".to_string()));
    assert_eq!(get(&format!("{base}/assets/app.js")).1, "console.log(1)");
    assert_eq!(get(&format!("{base}/assets/missing.js")).0, 404);
    assert_eq!(get(&format!("{base}/assets/%2e%2e/secret")).0, 404);

    let bare = Service::start(Hub::new(false), 0, None).unwrap();
    let (code, body) = get(&format!("{}/", bare.url()));
    assert_eq!(code, 200);
    assert!(body.contains("/api/"));
}

#[test]
fn recent_trajectories_and_metrics_follow_the_trainer() {
    let cfg = common::tiny(Algorithm::Pb2);
    let mut exp = Experiment::new(cfg.clone(), 0).unwrap();
    exp.run(&mut pb2::runner::oracle_for(&cfg, 0)).unwrap();

    for human in [false, true] {
        let hub = Hub::new(human);
        publish(&hub, &exp);
        let svc = Service::start(hub, 0, None).unwrap();
        let (code, body) = get(&format!("{}/api/trajectories/recent", svc.url()));
        assert_eq!(code, 200);
        let per_agent: Vec<Vec<TrajectoryRecord>> = serde_json::from_str(&body).unwrap();
        assert_eq!(per_agent.len(), 3);
        for (i, t) in per_agent.iter().enumerate() {
            assert_eq!(t.len(), exp.env().episode_len);
            assert!(t.iter().all(|r| r.agent_id == i));
            assert_eq!(t.iter().all(|r| r.r_gt.is_some()), !human);
        }
        let (_, metrics) = get(&format!("{}/api/metrics", svc.url()));
        let rows: Vec<serde_json::Value> = serde_json::from_str(&metrics).unwrap();
        assert_eq!(rows.len(), exp.points().len());
        assert_eq!(rows[0]["algorithm"], "pb2");
        let (_, status) = get(&format!("{}/api/status", svc.url()));
        assert!(status.contains("\"done\""), "{status}");
    }
}

#[test]
fn labels_posted_over_http_reach_the_preference_dataset() {
    let cfg = common::tiny(Algorithm::Pb2);
    let hub = Hub::new(true);
    let svc = Service::start(hub.clone(), 0, None).unwrap();
    let base = svc.url();
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().to_path_buf();

    let trainer = {
        let (cfg, hub) = (cfg.clone(), hub.clone());
        thread::spawn(move || {
            let mut teacher = HumanTeacher::new(hub.clone(), Duration::from_secs(30));
            run_seed(&cfg, 0, &mut teacher, Some(hub), &dir).unwrap()
        })
    };

    let choices = [
        r#"{"y":[1,0]}"#,
        r#"{"y":[0,1]}"#,
        r#"{"y":[0.5,0.5]}"#,
        r#"{"y":[0,1]}"#,
    ];
    let mut answered = 0;
    while answered < choices.len() {
        let (code, body) = get(&format!("{base}/api/queries/next"));
        if code == 204 {
            thread::sleep(Duration::from_millis(5));
            continue;
        }
        let q: QueryBody = serde_json::from_str(&body).unwrap();
        assert_eq!(q.seg0.len(), cfg.segment_len);
        let (code, _) = post(
            &format!("{base}/api/queries/{}/label", q.ticket_id),
            choices[answered],
        );
        assert_eq!(code, 200);
        answered += 1;
    }
    let summary = trainer.join().unwrap();
    assert_eq!(summary.record.feedback_used, 4);

    let lines: Vec<PreferenceLine> = read_jsonl(&out.path().join("preferences.jsonl")).unwrap();
    let labels: Vec<Label> = lines.iter().map(|l| l.y).collect();
    assert_eq!(
        labels,
        [Label::First, Label::Second, Label::Equal, Label::Second]
    );
    assert!(lines.iter().all(|l| l.teacher == TeacherTag::Human));
    let (_, status) = get(&format!("{base}/api/status"));
    assert!(status.contains("\"done\""), "{status}");
}
