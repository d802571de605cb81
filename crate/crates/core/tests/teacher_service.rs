//! The TCP teacher against the in-process one, plus failure handling.

use std::io::{BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use bbseg::domain::{benchmark, generate_sample, Role};
use bbseg::teacher::protocol::{read_frame, send, write_frame, Frame, Request, Response, MAX_FRAME};
use bbseg::teacher::{bayes_posterior, serve_teacher, RemoteTeacher, Teacher};
use bbseg::{FeatureMap, TeacherError};

fn scene(id: u64) -> FeatureMap {
    generate_sample(&benchmark::target_spec(), Role::TargetTrain, id, 12, 10)
        .unwrap()
        .features
}

fn read_response(reader: &mut BufReader<TcpStream>) -> Response {
    match read_frame(reader, MAX_FRAME).unwrap() {
        Frame::Body(b) => serde_json::from_slice(&b).unwrap(),
        other => panic!("expected a frame, got {other:?}"),
    }
}

#[test]
fn remote_matches_in_process() {
    let server = serve_teacher(benchmark::source_spec(), 0).unwrap();
    let mut remote = RemoteTeacher::new("127.0.0.1", server.local_addr().port(), 5_000);
    for id in 0..5 {
        let f = scene(id);
        let local = bayes_posterior(&f, &benchmark::source_spec()).unwrap();
        let got = remote.predict(&f).unwrap();
        assert!(got.max_abs_diff(&local) <= 1e-12);
    }
    server.stop().unwrap();
}

#[test]
fn hundred_sequential_requests_keep_ids_in_order() {
    let server = serve_teacher(benchmark::source_spec(), 0).unwrap();
    let stream = TcpStream::connect(server.local_addr()).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    let f = scene(0);
    for id in 0..100u64 {
        let request = Request::Predict {
            request_id: 1000 + id,
            h: f.height(),
            w: f.width(),
            d: f.channels(),
            features: f.as_slice().to_vec(),
        };
        send(&mut writer, &request).unwrap();
        match read_response(&mut reader) {
            Response::Result { request_id, c, probs } => {
                assert_eq!(request_id, 1000 + id);
                assert_eq!(c, benchmark::NUM_CLASSES);
                assert_eq!(probs.len(), c * f.num_pixels());
            }
            other => panic!("unexpected {other:?}"),
        }
    }
    drop((reader, writer));
    server.stop().unwrap();
}

#[test]
fn concurrent_clients_get_their_own_answers() {
    let server = serve_teacher(benchmark::source_spec(), 0).unwrap();
    let port = server.local_addr().port();
    let workers: Vec<_> = (0..4u64)
        .map(|k| {
            thread::spawn(move || {
                let mut remote = RemoteTeacher::new("127.0.0.1", port, 10_000);
                for id in 0..10 {
                    let f = scene(k * 100 + id);
                    let want = bayes_posterior(&f, &benchmark::source_spec()).unwrap();
                    assert!(remote.predict(&f).unwrap().max_abs_diff(&want) <= 1e-12);
                }
            })
        })
        .collect();
    for w in workers {
        w.join().unwrap();
    }
    server.stop().unwrap();
}

#[test]
fn garbage_and_oversize_frames_get_error_frames_and_the_connection_survives() {
    let server = serve_teacher(benchmark::source_spec(), 0).unwrap();
    let stream = TcpStream::connect(server.local_addr()).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;

    write_frame(&mut writer, b"\x00\x01 not json").unwrap();
    assert!(matches!(read_response(&mut reader), Response::Error { code, .. } if code.as_str() == "decode"));

    write_frame(&mut writer, br#"{"type":"predict","request_id":7}"#).unwrap();
    assert!(matches!(
        read_response(&mut reader),
        Response::Error { request_id: 7, code, .. } if code.as_str() == "decode"
    ));

    let request = Request::Predict {
        request_id: 8,
        h: 2,
        w: 2,
        d: 4,
        features: vec![0.0; 15],
    };
    send(&mut writer, &request).unwrap();
    assert!(matches!(
        read_response(&mut reader),
        Response::Error { request_id: 8, code, .. } if code.as_str() == "shape"
    ));

    let oversize = MAX_FRAME + 1;
    writer.write_all(&(oversize as u32).to_be_bytes()).unwrap();
    let chunk = vec![b' '; 1 << 20];
    let mut left = oversize;
    while left > 0 {
        let n = left.min(chunk.len());
        writer.write_all(&chunk[..n]).unwrap();
        left -= n;
    }
    writer.flush().unwrap();
    assert!(matches!(read_response(&mut reader), Response::Error { code, .. } if code.as_str() == "shape"));

    let f = scene(1);
    let request = Request::Predict {
        request_id: 9,
        h: f.height(),
        w: f.width(),
        d: f.channels(),
        features: f.as_slice().to_vec(),
    };
    send(&mut writer, &request).unwrap();
    assert!(matches!(read_response(&mut reader), Response::Result { request_id: 9, .. }));
    drop((reader, writer));
    server.stop().unwrap();
}

#[test]
fn unreachable_endpoint_times_out() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let mut remote = RemoteTeacher::new("127.0.0.1", port, 200);
    let started = Instant::now();
    assert!(matches!(remote.predict(&scene(0)), Err(TeacherError::Timeout(200))));
    assert!(started.elapsed() < Duration::from_secs(5));
}

/// Accepts one connection and answers every request with `respond`.
fn fake_teacher<F>(respond: F) -> u16
where
    F: Fn(u64) -> Vec<u8> + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut writer = stream;
        while let Ok(Frame::Body(body)) = read_frame(&mut reader, MAX_FRAME) {
            let Request::Predict { request_id, .. } = serde_json::from_slice(&body).unwrap();
            let reply = respond(request_id);
            if reply.is_empty() {
                thread::sleep(Duration::from_secs(2));
                return;
            }
            if write_frame(&mut writer, &reply).is_err() {
                return;
            }
        }
    });
    port
}

#[test]
fn silent_teacher_times_out() {
    let port = fake_teacher(|_| Vec::new());
    let mut remote = RemoteTeacher::new("127.0.0.1", port, 300);
    assert!(matches!(remote.predict(&scene(0)), Err(TeacherError::Timeout(300))));
}

#[test]
fn bad_responses_map_to_distinct_errors() {
    let f = FeatureMap::zeros(1, 2, benchmark::FEATURE_DIM);

    let port = fake_teacher(|_| b"{\"type\":\"result\"".to_vec());
    let mut remote = RemoteTeacher::new("127.0.0.1", port, 2_000);
    assert!(matches!(remote.predict(&f), Err(TeacherError::Malformed(_))));

    let port = fake_teacher(|id| {
        serde_json::to_vec(&Response::Result {
            request_id: id,
            c: 2,
            probs: vec![0.5, 0.9, 0.5, 0.3],
        })
        .unwrap()
    });
    let mut remote = RemoteTeacher::new("127.0.0.1", port, 2_000);
    assert!(matches!(remote.predict(&f), Err(TeacherError::SimplexViolation { pixel: 1 })));

    let port = fake_teacher(|id| {
        serde_json::to_vec(&Response::Result {
            request_id: id + 1,
            c: 2,
            probs: vec![0.5, 0.5, 0.5, 0.5],
        })
        .unwrap()
    });
    let mut remote = RemoteTeacher::new("127.0.0.1", port, 2_000);
    assert!(matches!(remote.predict(&f), Err(TeacherError::Malformed(_))));
}

#[test]
fn remote_errors_are_reported_with_their_code() {
    let server = serve_teacher(benchmark::source_spec(), 0).unwrap();
    let mut remote = RemoteTeacher::new("127.0.0.1", server.local_addr().port(), 2_000);
    let wrong_width = FeatureMap::zeros(2, 2, benchmark::FEATURE_DIM + 1);
    match remote.predict(&wrong_width) {
        Err(TeacherError::Remote { code, .. }) => assert_eq!(code, "shape"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(remote.predict(&scene(0)).is_ok());
    server.stop().unwrap();
}

#[test]
fn stop_closes_open_connections() {
    let server = serve_teacher(benchmark::source_spec(), 0).unwrap();
    let addr = server.local_addr();
    let mut remote = RemoteTeacher::new("127.0.0.1", addr.port(), 2_000);
    remote.predict(&scene(0)).unwrap();
    let deadline = Instant::now() + Duration::from_secs(2);
    while server.active_connections() != 1 && Instant::now() < deadline {
        thread::sleep(Duration::from_millis(5));
    }
    assert_eq!(server.active_connections(), 1);
    server.stop().unwrap();
    assert!(remote.predict(&scene(0)).is_err());
}
