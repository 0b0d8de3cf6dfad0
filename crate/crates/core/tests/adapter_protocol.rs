use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::thread;

use fairprobe::engine::{self, EngineConfig, SearchSpace};
use fairprobe::model::{serve, ExternalPredictor, FnPredictor, Predictor};
use fairprobe::records::verify_all;
use fairprobe::synth::{planted_dataset, planted_schema, PlantedBias};
use fairprobe::{Error, Sample, Value};

fn quarter() -> FnPredictor<impl Fn(&Sample) -> Vec<f64> + Send + Sync> {
    FnPredictor::new(vec!["no".into(), "yes".into()], |_: &Sample| vec![0.25, 0.75])
}

fn transcript(input: &str) -> String {
    let mut out = Vec::new();
    serve(&quarter(), &planted_schema(), input.as_bytes(), &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

#[test]
fn server_golden_transcript() {
    let input = concat!(
        "{\"op\":\"hello\"}\n",
        "{\"op\":\"predict\",\"id\":0,\"x\":[\"male\",6,2,3]}\n",
        "\n",
        "{\"op\":\"predict\",\"id\":41,\"x\":[\"female\",0,0,7]}\n",
    );
    let expected = concat!(
        "{\"op\":\"hello\",\"labels\":[\"no\",\"yes\"]}\n",
        "{\"op\":\"probs\",\"id\":0,\"p\":[0.25,0.75]}\n",
        "{\"op\":\"probs\",\"id\":41,\"p\":[0.25,0.75]}\n",
    );
    assert_eq!(transcript(input), expected);
}

#[test]
fn server_answers_bad_requests_with_errors() {
    let out = transcript(concat!(
        "not json\n",
        "{\"op\":\"predict\",\"id\":5,\"x\":[\"robot\",6,2,3]}\n",
        "{\"op\":\"predict\",\"id\":6,\"x\":[\"male\",6]}\n",
        "{\"op\":\"predict\",\"x\":[\"male\",6,2,3]}\n",
        "{\"op\":\"dance\",\"id\":9}\n",
        "{\"op\":\"predict\",\"id\":7,\"x\":[\"male\",1,1,1]}\n",
    ));
    let lines: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 6);
    for (line, id) in lines[..5].iter().zip([None, Some(5), Some(6), None, Some(9)]) {
        assert_eq!(line["op"], "error");
        assert_eq!(line["id"].as_u64(), id);
        assert!(!line["msg"].as_str().unwrap().is_empty());
    }
    // the stream survives errors
    assert_eq!(lines[5]["op"], "probs");
    assert_eq!(lines[5]["id"], 7);
}

/// Replies with canned lines and returns what the client sent.
fn tcp_stub(replies: Vec<&'static str>) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("tcp://{}", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut writer = stream;
        let mut seen = Vec::new();
        for reply in replies {
            let mut line = String::new();
            if reader.read_line(&mut line).unwrap() == 0 {
                break;
            }
            seen.push(line);
            writer.write_all(format!("{reply}\n").as_bytes()).unwrap();
        }
        seen
    });
    (addr, handle)
}

fn sample(sex: usize, t: i64, g: i64, h: i64) -> Sample {
    Sample::new(vec![Value::Category(sex), Value::Numeric(t), Value::Numeric(g), Value::Numeric(h)])
}

#[test]
fn client_golden_requests_over_tcp() {
    let (addr, stub) = tcp_stub(vec![
        r#"{"op":"hello","labels":["no","yes"]}"#,
        r#"{"op":"probs","id":0,"p":[0.6,0.4]}"#,
        r#"{"op":"probs","id":1,"p":[0.2,0.8]}"#,
    ]);
    let f = ExternalPredictor::connect(&addr, planted_schema()).unwrap();
    assert_eq!(f.labels(), ["no", "yes"]);
    assert_eq!(f.predict_proba(&sample(0, 6, 2, 3)).unwrap(), vec![0.6, 0.4]);
    assert_eq!(f.predict_proba(&sample(1, 0, 7, 1)).unwrap(), vec![0.2, 0.8]);
    assert_eq!(f.query_count(), 2);
    drop(f);
    let sent = stub.join().unwrap();
    assert_eq!(
        sent,
        [
            "{\"op\":\"hello\"}\n",
            "{\"op\":\"predict\",\"id\":0,\"x\":[\"male\",6,2,3]}\n",
            "{\"op\":\"predict\",\"id\":1,\"x\":[\"female\",0,7,1]}\n",
        ]
    );
}

fn one_reply(reply: &'static str) -> Error {
    let (addr, stub) = tcp_stub(vec![r#"{"op":"hello","labels":["no","yes"]}"#, reply]);
    let f = ExternalPredictor::connect(&addr, planted_schema()).unwrap();
    let err = f.predict_proba(&sample(0, 1, 2, 3)).unwrap_err();
    drop(f);
    stub.join().unwrap();
    err
}

#[test]
fn client_rejects_bad_replies() {
    assert!(matches!(one_reply(r#"{"op":"probs","id":3,"p":[0.5,0.5]}"#), Error::ProtocolViolation { .. }));
    assert!(matches!(one_reply(r#"{"op":"probs","id":0,"p":[0.5,0.6]}"#), Error::ProtocolViolation { .. }));
    assert!(matches!(one_reply(r#"{"op":"probs","id":0,"p":[1.0]}"#), Error::ProtocolViolation { .. }));
    assert!(matches!(one_reply("garbage"), Error::ProtocolViolation { .. }));
    match one_reply(r#"{"op":"error","id":0,"msg":"boom"}"#) {
        Error::AdapterError { id, msg } => assert_eq!((id, msg.as_str()), (0, "boom")),
        other => panic!("{other}"),
    }
}

#[test]
fn client_renormalises_small_sum_drift() {
    let p = match one_reply_ok(r#"{"op":"probs","id":0,"p":[0.3002,0.7]}"#) {
        Ok(p) => p,
        Err(e) => panic!("{e}"),
    };
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

fn one_reply_ok(reply: &'static str) -> fairprobe::Result<Vec<f64>> {
    let (addr, stub) = tcp_stub(vec![r#"{"op":"hello","labels":["no","yes"]}"#, reply]);
    let f = ExternalPredictor::connect(&addr, planted_schema()).unwrap();
    let out = f.predict_proba(&sample(0, 1, 2, 3));
    drop(f);
    stub.join().unwrap();
    out
}

#[test]
fn handshake_checks_labels() {
    let (addr, stub) = tcp_stub(vec![r#"{"op":"hello","labels":["yes","no"]}"#]);
    assert!(matches!(ExternalPredictor::connect(&addr, planted_schema()), Err(Error::ProtocolViolation { .. })));
    stub.join().unwrap();
}

#[test]
fn unreachable_adapter_is_reported() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = ExternalPredictor::connect(&format!("tcp://127.0.0.1:{port}"), planted_schema()).err().unwrap();
    assert!(matches!(err, Error::AdapterDown(_)));
}

#[test]
fn stdio_transport_through_a_shell_command() {
    let cmd = r#"read l; printf '{"op":"hello","labels":["no","yes"]}\n'; read l; printf '{"op":"probs","id":0,"p":[0.9,0.1]}\n'"#;
    let f = ExternalPredictor::connect(cmd, planted_schema()).unwrap();
    assert_eq!(f.predict_proba(&sample(1, 2, 3, 4)).unwrap(), vec![0.9, 0.1]);
    assert!(matches!(f.predict_proba(&sample(1, 2, 3, 4)), Err(Error::AdapterDown(_))));
}

#[test]
fn search_through_served_model_is_sound() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("tcp://{}", listener.local_addr().unwrap());
    let server = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        stream.set_nodelay(true).unwrap();
        let reader = BufReader::new(stream.try_clone().unwrap());
        serve(&PlantedBias::standard(), &planted_schema(), reader, stream).unwrap();
    });
    let remote = ExternalPredictor::connect(&addr, planted_schema()).unwrap();
    let local = PlantedBias::standard();
    let data = planted_dataset(&local, 120, false, 5);
    let space = SearchSpace::tabular(planted_schema()).unwrap();
    let cfg = EngineConfig { time_budget: None, tsn_budget: Some(1500), ..EngineConfig::tabular(1) };
    let via_wire = engine::run(&data, &space, &remote, &cfg).unwrap();
    let direct = engine::run(&data, &space, &local, &cfg).unwrap();
    drop(remote);
    server.join().unwrap();

    assert!(via_wire.metrics.dsn > 0);
    assert!(verify_all(&via_wire.records, &local, &space).unwrap().is_empty());
    let keys = |rs: &[fairprobe::DiscriminatoryRecord]| rs.iter().map(|r| r.dedupe_key.clone()).collect::<Vec<_>>();
    assert_eq!(keys(&via_wire.records), keys(&direct.records));
}
