mod common;

use std::fs;
use std::path::Path;
use std::process::Output;

use common::*;

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn demo(dir: &Path, extra: &[&str]) -> Output {
    hetm().arg("demo").arg("--no-pause").arg("--dir").arg(dir).args(extra).output().unwrap()
}

fn sorted_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn demo_is_reproducible_from_its_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, rb) = (demo(a.path(), &["--seed", "4"]), demo(b.path(), &["--seed", "4"]));
    assert_eq!(code(&ra), 0, "{}", stderr(&ra));
    assert_eq!(code(&rb), 0);
    for name in ["test.galk", "test.ct", "result.ct"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let text = stdout(&ra);
    assert!(text.contains("Step 11"));
    assert!(text.contains("Predicted Labels: 0   &   1"), "{text}");
}

#[test]
fn oversized_flood_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = demo(dir.path(), &["--flood-bits", "20"]);
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).starts_with("error[config]: "), "{}", stderr(&out));
}

#[test]
fn bad_arguments_exit_with_config_code() {
    let out = hetm().args(["seller", "--dir", "x", "--listen", "127.0.0.1:1"]).output().unwrap();
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).starts_with("error[config]: "));
    let out = hetm().args(["buyer"]).output().unwrap();
    assert_eq!(code(&out), 5);
}

#[test]
fn seller_refuses_a_used_exchange_dir() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("msg-01-params"), b"old").unwrap();
    let out = hetm().arg("seller").arg("--dir").arg(dir.path()).args(["--timeout", "2"]).output().unwrap();
    assert_eq!(code(&out), 5, "{}", stderr(&out));
}

#[test]
fn buyer_without_peer_times_out_as_transport_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = hetm().arg("buyer").arg("--dir").arg(dir.path()).args(["--timeout", "1"]).output().unwrap();
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).starts_with("error[transport]: "), "{}", stderr(&out));
}

#[test]
fn priced_out_buyer_declines_cleanly() {
    let work = tempfile::tempdir().unwrap();
    let out = run_pair(Link::Files, work.path(), &[], &["--max-price", "1/2"]);
    assert_eq!(code(&out.buyer), 0, "{}", out.buyer_stderr());
    assert_eq!(code(&out.seller), 0, "{}", stderr(&out.seller));
    assert!(out.buyer_stdout().contains("DECLINED: "));
    assert!(stdout(&out.seller).contains("buyer declined"));
}

#[test]
fn both_transports_carry_identical_envelopes() {
    let mut transcripts = Vec::new();
    for link in [Link::Files, Link::Socket] {
        let work = tempfile::tempdir().unwrap();
        let (st, bt) = (work.path().join("seller-log"), work.path().join("buyer-log"));
        let (st_s, bt_s) = (st.to_string_lossy().into_owned(), bt.to_string_lossy().into_owned());
        let out = run_pair(
            link,
            work.path(),
            &["--seed", "9", "--transcript", &st_s],
            &["--seed", "9", "--transcript", &bt_s],
        );
        assert_eq!(code(&out.buyer), 0, "{link:?}: {}", out.buyer_stderr());
        assert_eq!(field(&out.buyer_stdout(), "verdict").as_deref(), Some("HONEST"));
        let (s, b) = (sorted_files(&st), sorted_files(&bt));
        assert_eq!(s, b, "{link:?}: the two ends saw different bytes");
        let names: Vec<&str> = s.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["msg-01-params", "msg-02-query", "msg-03-result", "msg-04-payment", "msg-05-delivery"]);
        transcripts.push(s);
    }
    assert_eq!(transcripts[0], transcripts[1]);
}

#[test]
fn refused_query_still_allows_purchase() {
    let work = tempfile::tempdir().unwrap();
    let out = run_pair(Link::Socket, work.path(), &["--record-cap", "1"], &[]);
    assert_eq!(code(&out.buyer), 2, "{}", out.buyer_stdout());
    assert!(out.buyer_stdout().contains("query refused: RECORD_CAP"));
    assert!(out.buyer_stderr().starts_with("error[protocol]: step 7"), "{}", out.buyer_stderr());
}

#[test]
fn extract_writes_its_summary() {
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("summary.txt");
    let out = hetm()
        .args(["extract", "--queries", "7", "--record-cap", "1", "--trials", "2", "--summary"])
        .arg(&summary)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("attack RECOVERED"), "{text}");
    let written = fs::read_to_string(&summary).unwrap();
    assert_eq!(field(&written, "successes").as_deref(), Some("2"));
    assert_eq!(field(&written, "mean_cost").as_deref(), Some("127"));
    assert!(text.ends_with(&written));

    let out = hetm().args(["extract", "--queries", "6", "--record-cap", "1", "--trials", "1"]).output().unwrap();
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("attack FAILURE BUDGET"));
}
