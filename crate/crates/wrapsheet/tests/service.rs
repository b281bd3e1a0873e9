mod common;

use std::collections::BTreeMap;

use common::{rds_inputs, user_token, TestServer, WAIT};
use wrapsheet::client::ClientError;
use wrapsheet::core::{CellValue, ErrorCode, OutputValue, RawValue};
use wrapsheet::db::{Action, AuditFilter, Db, NewRun, Status};
use wrapsheet::report_html::chart_blocks;
use wrapsheet::service::{CreateRun, PublishRequest};
use wrapsheet::{Config, Platform, Principal, Role};

fn status<T: std::fmt::Debug>(r: Result<T, ClientError>) -> u16 {
    r.expect_err("expected an error status")
        .status()
        .expect("HTTP status")
}

fn run_x(x: f64) -> CreateRun {
    CreateRun {
        app: "minimal".into(),
        rev: None,
        inputs: [("x".to_string(), RawValue::Number(x))].into(),
        period: None,
    }
}

fn rds_run(values: &[[f64; 4]; 3], period: &str) -> CreateRun {
    CreateRun {
        app: "rds".into(),
        rev: None,
        inputs: rds_inputs(values),
        period: Some(period.into()),
    }
}

fn result_of(outputs: &Option<wrapsheet::core::Outputs>) -> Option<f64> {
    match outputs.as_ref()?.get("result")? {
        OutputValue::Scalar(CellValue::Number(n)) => Some(*n),
        _ => None,
    }
}

#[test]
fn roles_gate_every_endpoint() {
    let srv = TestServer::start(2, |_| {});
    let req = common::request(&common::rds_bundle());
    assert_eq!(status(srv.client("wrong").apps()), 401);
    assert_eq!(status(srv.client(&user_token(1)).publish(&req)), 403);
    assert_eq!(srv.author().publish(&req).unwrap(), 1);
    assert_eq!(status(srv.author().app("nope", None)), 404);
    assert_eq!(status(srv.author().app("rds", Some(9))), 404);

    let consumer_view = srv.client(&user_token(1)).app("rds", None).unwrap();
    assert!(consumer_view.definition.get("bindings").is_none());
    assert!(consumer_view.definition.get("workbooks").is_none());
    assert!(consumer_view.definition["aggregate_report"]
        .get("region")
        .is_none());
    assert!(consumer_view.definition["ui"]["children"].is_array());
    let author_view = srv.author().app("rds", None).unwrap();
    assert!(author_view.definition["bindings"]["inputs"].is_object());

    let u1 = srv.client(&user_token(1));
    let id = u1.create_run(&rds_run(&[[1.0; 4]; 3], "p")).unwrap();
    assert_eq!(u1.wait(&id, WAIT).unwrap().status, Status::Completed);
    assert_eq!(status(srv.client(&user_token(2)).run(&id)), 404);
    assert_eq!(status(srv.client(&user_token(2)).report(&id)), 404);
    assert_eq!(srv.admin().run(&id).unwrap().run_id, id);
    assert_eq!(status(u1.audit(&AuditFilter::default())), 403);
    assert_eq!(status(srv.author().audit(&AuditFilter::default())), 403);
    assert_eq!(status(u1.aggregate("rds", "p", &[], &[])), 403);
    assert_eq!(status(srv.author().restore("rds", 1)), 403);
    assert_eq!(status(srv.admin().restore("rds", 5)), 404);
}

#[test]
fn publish_rejects_invalid_bundles_with_issues() {
    let srv = TestServer::start(0, |_| {});
    let mut req = common::request(&common::minimal_bundle());
    req.definition["bindings"]["inputs"]["x"]["cell"] = "Sheet1!A2".into();
    let err = srv.author().publish(&req).unwrap_err();
    let ClientError::Status { status, body } = err else {
        panic!("{err}")
    };
    assert_eq!(status, 422);
    assert!(
        body["issues"][0]["path"]
            .as_str()
            .unwrap()
            .starts_with("bindings.inputs.x"),
        "{body}"
    );

    let missing = PublishRequest {
        workbooks: BTreeMap::new(),
        ..common::request(&common::minimal_bundle())
    };
    assert_eq!(status_of(srv.author().publish(&missing)), 422);
    assert!(srv.author().apps().unwrap().is_empty());
    assert!(srv
        .admin()
        .audit(&AuditFilter::default())
        .unwrap()
        .is_empty());
}

fn status_of<T: std::fmt::Debug>(r: Result<T, ClientError>) -> u16 {
    status(r)
}

#[test]
fn audit_trail_counts_and_filters() {
    let srv = TestServer::start(2, |_| {});
    srv.author()
        .publish(&common::request(&common::minimal_bundle()))
        .unwrap();
    let u1 = srv.client(&user_token(1));
    let id = u1.create_run(&run_x(5.0)).unwrap();
    let view = u1.wait(&id, WAIT).unwrap();
    assert_eq!(result_of(&view.outputs), Some(10.0));

    let admin = srv.admin();
    let all = admin.audit(&AuditFilter::default()).unwrap();
    let actions: Vec<Action> = all.iter().map(|r| r.action).collect();
    assert_eq!(
        actions,
        [Action::Publish, Action::RunCreated, Action::RunCompleted]
    );
    assert!(all.windows(2).all(|w| w[0].seq < w[1].seq));
    assert_eq!(all[0].user, "ann");
    assert_eq!(
        (all[0].run_id.as_deref(), all[0].input_digest.as_deref()),
        (None, None)
    );
    assert_eq!(all[1].run_id.as_deref(), Some(id.as_str()));
    assert_eq!(all[1].input_digest, all[2].input_digest);

    let mine = admin
        .audit(&AuditFilter {
            user: Some("u01".into()),
            ..Default::default()
        })
        .unwrap();
    assert_eq!(mine.len(), 2);
    assert!(admin
        .audit(&AuditFilter {
            user: Some("u02".into()),
            ..Default::default()
        })
        .unwrap()
        .is_empty());
    assert!(admin
        .audit(&AuditFilter {
            app: Some("other".into()),
            ..Default::default()
        })
        .unwrap()
        .is_empty());
    let future = AuditFilter {
        from: Some("2999-01-01T00:00:00+00:00".into()),
        ..Default::default()
    };
    assert!(admin.audit(&future).unwrap().is_empty());
    let past = AuditFilter {
        to: Some("2000-01-01T00:00:00Z".into()),
        ..Default::default()
    };
    assert!(admin.audit(&past).unwrap().is_empty());
    let window = AuditFilter {
        from: Some(all[0].at.clone()),
        to: Some(all[2].at.clone()),
        ..Default::default()
    };
    assert_eq!(admin.audit(&window).unwrap().len(), 3);
    let bad = AuditFilter {
        from: Some("yesterday".into()),
        ..Default::default()
    };
    assert_eq!(status(admin.audit(&bad)), 400);
}

#[test]
fn identical_inputs_share_a_digest() {
    let srv = TestServer::start(1, |_| {});
    srv.author()
        .publish(&common::request(&common::minimal_bundle()))
        .unwrap();
    let u1 = srv.client(&user_token(1));
    let a = u1.create_run(&run_x(5.0)).unwrap();
    let b = u1
        .create_run(&CreateRun {
            inputs: [("x".to_string(), RawValue::Text("5".into()))].into(),
            ..run_x(0.0)
        })
        .unwrap();
    let c = u1.create_run(&run_x(6.0)).unwrap();
    for id in [&a, &b, &c] {
        u1.wait(id, WAIT).unwrap();
    }
    let records = srv.admin().audit(&AuditFilter::default()).unwrap();
    let digest = |id: &str| {
        records
            .iter()
            .find(|r| r.run_id.as_deref() == Some(id))
            .unwrap()
            .input_digest
            .clone()
            .unwrap()
    };
    assert_eq!(digest(&a), digest(&b));
    assert_ne!(digest(&a), digest(&c));
}

#[test]
fn error_outputs_complete_with_flags() {
    let srv = TestServer::start(1, |_| {});
    let mut bundle = common::rds_bundle();
    let exposure = bundle.workbooks.get_mut("exposure").unwrap();
    *exposure = exposure.replacen(
        "\"=Exposure!B2\"",
        "\"=IF(Exposure!B2=2,Exposure!B2/0,Exposure!B2)\"",
        1,
    );
    srv.author().publish(&common::request(&bundle)).unwrap();
    let u1 = srv.client(&user_token(1));
    let id = u1.create_run(&rds_run(&[[2.0; 4]; 3], "q")).unwrap();
    let view = u1.wait(&id, WAIT).unwrap();
    assert_eq!(view.status, Status::Completed);
    assert_eq!(view.flags.len(), 1, "{:?}", view.flags);
    assert!(view.flags[0].contains("#DIV/0!"), "{:?}", view.flags);
    let Some(OutputValue::Scalar(grand)) = view.outputs.as_ref().unwrap().get("grand_total") else {
        panic!()
    };
    assert_eq!(grand, &CellValue::Error(ErrorCode::DivZero));
    assert_eq!(
        srv.server
            .platform()
            .db()
            .submissions("rds", "q")
            .unwrap()
            .len(),
        11
    );
}

#[test]
fn submissions_are_recorded_once_per_key() {
    let db = Db::open_in_memory().unwrap();
    let inputs = BTreeMap::new();
    db.create_run(&NewRun {
        id: "r1",
        user: "u01",
        app: "rds",
        revision: 1,
        period: "p",
        inputs: &inputs,
        input_digest: "d",
    })
    .unwrap();
    let run = db.run("r1").unwrap().unwrap();
    let keys = vec!["scenario".to_string(), "risk_code".to_string()];
    let measures = vec!["exposure".to_string()];
    let rows: Vec<_> = [("S1", "RC-01", 1.5), ("S1", "RC-02", 2.5)]
        .iter()
        .map(|(s, c, v)| wrapsheet::core::submission::SubmissionRow {
            keys: vec![s.to_string(), c.to_string()],
            measures: vec![*v],
        })
        .collect();
    db.record_submissions(&run, &keys, &measures, &rows)
        .unwrap();
    db.record_submissions(&run, &keys, &measures, &rows)
        .unwrap();
    let stored = db.submissions("rds", "p").unwrap();
    assert_eq!(stored.len(), 2);
    assert_eq!(stored[0].measures["exposure"], 1.5);
    assert!(db.submissions("rds", "other").unwrap().is_empty());
}

#[test]
fn full_queue_answers_409() {
    let srv = TestServer::start(1, |c| c.queue_bound = 0);
    srv.author()
        .publish(&common::request(&common::minimal_bundle()))
        .unwrap();
    assert_eq!(
        status(srv.client(&user_token(1)).create_run(&run_x(1.0))),
        409
    );
    assert_eq!(srv.server.platform().db().count_runs().unwrap(), 0);
}

#[test]
fn bad_requests_are_rejected_before_queueing() {
    let srv = TestServer::start(1, |_| {});
    srv.author()
        .publish(&common::request(&common::minimal_bundle()))
        .unwrap();
    let u1 = srv.client(&user_token(1));
    assert_eq!(
        status(u1.create_run(&CreateRun {
            period: Some("a/b".into()),
            ..run_x(1.0)
        })),
        400
    );
    assert_eq!(
        status(u1.create_run(&CreateRun {
            period: Some(String::new()),
            ..run_x(1.0)
        })),
        400
    );
    assert_eq!(
        status(u1.create_run(&CreateRun {
            app: "nope".into(),
            ..run_x(1.0)
        })),
        404
    );
    assert_eq!(
        status(u1.create_run(&CreateRun {
            rev: Some(7),
            ..run_x(1.0)
        })),
        404
    );
    let err = u1
        .create_run(&CreateRun {
            inputs: BTreeMap::new(),
            ..run_x(1.0)
        })
        .unwrap_err();
    let ClientError::Status { status, body } = err else {
        panic!()
    };
    assert_eq!(status, 422);
    assert_eq!(body["field_errors"]["x"], "required");
    let err = u1
        .create_run(&CreateRun {
            inputs: [("y".to_string(), RawValue::Number(1.0))].into(),
            ..run_x(1.0)
        })
        .unwrap_err();
    assert_eq!(err.status(), Some(422));
    assert_eq!(srv.server.platform().db().count_runs().unwrap(), 0);
}

#[test]
fn raw_http_edges() {
    let srv = TestServer::start(1, |_| {});
    let http = reqwest::blocking::Client::new();
    let url = srv.server.url();
    let r = http.get(format!("{url}/api/apps")).send().unwrap();
    assert_eq!(r.status().as_u16(), 401);
    let r = http
        .post(format!("{url}/api/runs"))
        .header("X-Auth-Token", "tok-u01")
        .body("{not json")
        .send()
        .unwrap();
    assert_eq!(r.status().as_u16(), 400);
    let r = http
        .get(format!("{url}/api/audit?who=x"))
        .header("X-Auth-Token", "tok-admin")
        .send()
        .unwrap();
    assert_eq!(r.status().as_u16(), 400);
    let r = http.get(format!("{url}/no/such/page")).send().unwrap();
    assert_eq!(r.status().as_u16(), 404);
    let r = http
        .get(format!("{url}/api/runs/missing"))
        .header("X-Auth-Token", "tok-u01")
        .send()
        .unwrap();
    assert_eq!(r.status().as_u16(), 404);
    let body: serde_json::Value = r.json().unwrap();
    assert!(body["error"].is_string(), "{body}");
}

#[test]
fn static_files_are_served_from_the_configured_directory() {
    let web = tempfile::tempdir().unwrap();
    std::fs::write(web.path().join("index.html"), "<p>hello</p>").unwrap();
    let root = web.path().to_path_buf();
    let srv = TestServer::start(0, move |c| c.static_dir = Some(root));
    let r = reqwest::blocking::get(format!("{}/index.html", srv.server.url())).unwrap();
    assert_eq!(r.status().as_u16(), 200);
    assert_eq!(r.text().unwrap(), "<p>hello</p>");
    let r = reqwest::blocking::get(format!("{}/../secret", srv.server.url())).unwrap();
    assert_ne!(r.status().as_u16(), 200);
}

/// The minimal app over a book whose evaluation reads millions of cells.
fn heavy_bundle() -> wrapsheet::Bundle {
    let n = 600;
    let mut cells = serde_json::Map::new();
    for r in 1..=n {
        cells.insert(format!("A{r}"), serde_json::json!({"v": 1}));
        cells.insert(
            format!("B{r}"),
            serde_json::json!({"f": format!("=SUM($A$1:$A${n})+A{r}*$C$1")}),
        );
    }
    cells.insert("C1".into(), serde_json::json!({"v": 0}));
    cells.insert(
        "D1".into(),
        serde_json::json!({"f": format!("=SUM(B1:B{n})")}),
    );
    let book = serde_json::json!({"sheets": [{"name": "Sheet1", "cells": cells}]});
    let mut bundle = common::minimal_bundle();
    bundle.definition = bundle
        .definition
        .replace("Sheet1!A1", "Sheet1!C1")
        .replace("Sheet1!A2", "Sheet1!D1");
    bundle.workbooks.insert("book".into(), book.to_string());
    bundle
}

#[test]
fn slow_runs_fail_with_timeout() {
    let srv = TestServer::start(1, |c| c.run_timeout_secs = 0.001);
    srv.author()
        .publish(&common::request(&heavy_bundle()))
        .unwrap();
    let u1 = srv.client(&user_token(1));
    let id = u1.create_run(&run_x(1.0)).unwrap();
    let view = u1.wait(&id, WAIT).unwrap();
    assert_eq!(
        (view.status, view.failure.as_deref()),
        (Status::Failed, Some("timeout"))
    );
    assert!(view.outputs.is_none());
    let records = srv
        .admin()
        .audit(&AuditFilter {
            user: Some("u01".into()),
            ..Default::default()
        })
        .unwrap();
    assert_eq!(records.last().unwrap().action, Action::RunFailed);
}

fn platform_config(dir: &std::path::Path, workers: usize) -> Config {
    let mut cfg = common::config(dir, 1);
    cfg.workers = workers;
    cfg
}

#[test]
fn restart_fails_running_runs_and_resumes_queued_ones() {
    let dir = tempfile::tempdir().unwrap();
    let author = Principal {
        user: "ann".into(),
        role: Role::Author,
    };
    let p = Platform::start(platform_config(dir.path(), 1)).unwrap();
    p.publish(&author, &common::request(&common::minimal_bundle()))
        .unwrap();
    p.shutdown();

    let db = Db::open(&dir.path().join("wrapsheet.db")).unwrap();
    let inputs: BTreeMap<String, RawValue> = [("x".to_string(), RawValue::Number(4.0))].into();
    for id in ["stuck", "waiting"] {
        db.create_run(&NewRun {
            id,
            user: "u01",
            app: "minimal",
            revision: 1,
            period: "default",
            inputs: &inputs,
            input_digest: "d",
        })
        .unwrap();
    }
    assert!(db.claim("stuck").unwrap());
    drop(db);

    let p = Platform::start(platform_config(dir.path(), 1)).unwrap();
    let u1 = p.authenticate(Some(&user_token(1))).unwrap();
    let stuck = p.wait_for(&u1, "stuck", WAIT).unwrap();
    assert_eq!(
        (stuck.status, stuck.failure.as_deref()),
        (Status::Failed, Some("interrupted"))
    );
    let waiting = p.wait_for(&u1, "waiting", WAIT).unwrap();
    assert_eq!(waiting.status, Status::Completed);
    assert_eq!(result_of(&waiting.outputs), Some(8.0));
    p.shutdown();
}

#[test]
fn runs_keep_the_revision_they_were_created_against() {
    let dir = tempfile::tempdir().unwrap();
    let author = Principal {
        user: "ann".into(),
        role: Role::Author,
    };
    // No workers: the run stays queued while a new revision lands.
    let p = Platform::start(platform_config(dir.path(), 0)).unwrap();
    p.publish(&author, &common::request(&common::minimal_with_factor(3)))
        .unwrap();
    let u1 = p.authenticate(Some(&user_token(1))).unwrap();
    let early = p.create_run(&u1, &run_x(5.0)).unwrap();
    assert_eq!(
        p.publish(&author, &common::request(&common::minimal_with_factor(4)))
            .unwrap(),
        2
    );
    let pinned = p
        .create_run(
            &u1,
            &CreateRun {
                rev: Some(1),
                ..run_x(5.0)
            },
        )
        .unwrap();
    let late = p.create_run(&u1, &run_x(5.0)).unwrap();
    p.shutdown();

    let p = Platform::start(platform_config(dir.path(), 2)).unwrap();
    let got: Vec<(u32, Option<f64>)> = [&early, &pinned, &late]
        .iter()
        .map(|id| {
            let v = p.wait_for(&u1, id, WAIT).unwrap();
            (v.revision, result_of(&v.outputs))
        })
        .collect();
    assert_eq!(got, [(1, Some(15.0)), (1, Some(15.0)), (2, Some(20.0))]);
    p.shutdown();
}

#[test]
fn concurrent_publishes_never_mix_revisions() {
    let srv = TestServer::start(4, |c| c.workers = 4);
    srv.author()
        .publish(&common::request(&common::minimal_with_factor(2)))
        .unwrap();
    let url = srv.server.url();
    let publisher = {
        let url = url.clone();
        std::thread::spawn(move || {
            let author = wrapsheet::client::Client::new(&url, "tok-author");
            for rev in 2..=8u32 {
                // revision r computes x * (r + 1)
                assert_eq!(
                    author
                        .publish(&common::request(&common::minimal_with_factor(rev + 1)))
                        .unwrap(),
                    rev
                );
            }
        })
    };
    let runners: Vec<_> = (1..=4)
        .map(|u| {
            let url = url.clone();
            std::thread::spawn(move || {
                let c = wrapsheet::client::Client::new(&url, &user_token(u));
                let ids: Vec<String> = (0..10)
                    .map(|i| c.create_run(&run_x(i as f64)).unwrap())
                    .collect();
                ids.iter()
                    .enumerate()
                    .map(|(i, id)| {
                        let v = c.wait(id, WAIT).unwrap();
                        (i as f64, v.revision, result_of(&v.outputs).unwrap())
                    })
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    publisher.join().unwrap();
    for r in runners {
        for (x, rev, result) in r.join().unwrap() {
            assert_eq!(result, x * (rev as f64 + 1.0), "run on revision {rev}");
        }
    }
}

#[test]
fn aggregates_follow_periods_and_reports_render() {
    let srv = TestServer::start(2, |_| {});
    srv.author()
        .publish(&common::request(&common::rds_bundle()))
        .unwrap();
    let grid = |k: f64| [[k, 0.0, 0.0, 0.0], [0.0, k, 0.0, 0.0], [0.0, 0.0, k, k]];
    for (u, period, k) in [(1, "A", 1.0), (2, "A", 10.0), (1, "B", 100.0)] {
        let c = srv.client(&user_token(u));
        let id = c.create_run(&rds_run(&grid(k), period)).unwrap();
        assert_eq!(c.wait(&id, WAIT).unwrap().status, Status::Completed);
    }
    let author = srv.author();
    let a = author
        .aggregate("rds", "A", &["scenario".into()], &[])
        .unwrap();
    let sums: Vec<(String, f64, usize)> = a
        .groups
        .iter()
        .map(|g| (g.keys[0].clone(), g.sums[0], g.users))
        .collect();
    assert_eq!(
        sums,
        [
            ("S1".into(), 11.0, 2),
            ("S2".into(), 11.0, 2),
            ("S3".into(), 22.0, 2)
        ]
    );
    let b = author.aggregate("rds", "B", &[], &[]).unwrap();
    assert_eq!((b.users, b.total(0)), (1, 400.0));
    assert!(author
        .aggregate("rds", "C", &[], &[])
        .unwrap()
        .groups
        .is_empty());
    assert_eq!(
        status(author.aggregate("rds", "A", &["desk".into()], &[])),
        400
    );

    let html = author.aggregate_report("rds", "A").unwrap();
    assert!(html.contains("RDS market aggregate"));
    assert!(html.contains("Market total exposure: 44"), "{html}");
    let charts = chart_blocks(&html);
    assert_eq!(charts.len(), 1);
    assert_eq!(
        charts[0]["categories"],
        serde_json::json!(["S1", "S2", "S3"])
    );

    srv.author()
        .publish(&common::request(&common::minimal_bundle()))
        .unwrap();
    assert_eq!(status(author.aggregate("minimal", "A", &[], &[])), 400);
}

#[test]
fn run_reports_show_the_run_outputs() {
    let srv = TestServer::start(1, |_| {});
    srv.author()
        .publish(&common::request(&common::rds_bundle()))
        .unwrap();
    let u1 = srv.client(&user_token(1));
    let values = [
        [120.0, 45.0, 0.0, 310.0],
        [75.0, 0.0, 220.0, 15.0],
        [40.0, 90.0, 60.0, 5.0],
    ];
    let id = u1.create_run(&rds_run(&values, "r")).unwrap();
    let view = u1.wait(&id, WAIT).unwrap();
    assert_eq!(
        view.report_url.as_deref(),
        Some(format!("/api/reports/{id}").as_str())
    );
    let html = u1.report(&id).unwrap();
    assert!(html.contains("Grand total exposure: 980"), "{html}");
    let charts = chart_blocks(&html);
    assert_eq!(
        charts[0]["series"][0]["values"],
        serde_json::json!([120.0, 75.0, 40.0])
    );
}

#[test]
fn restores_are_audited() {
    let srv = TestServer::start(0, |_| {});
    for f in [2, 3] {
        srv.author()
            .publish(&common::request(&common::minimal_with_factor(f)))
            .unwrap();
    }
    assert_eq!(srv.admin().restore("minimal", 1).unwrap(), 3);
    let records = srv.admin().audit(&AuditFilter::default()).unwrap();
    let last = records.last().unwrap();
    assert_eq!(
        (last.action, last.user.as_str(), last.revision),
        (Action::Restore, "root", 3)
    );
    assert_eq!(last.run_id, None);
    let meta = srv
        .server
        .platform()
        .store()
        .meta("minimal", Some(3))
        .unwrap();
    assert_eq!(
        meta.origin,
        wrapsheet::store::Origin::RestoreOf { revision: 1 }
    );
}
