mod common;

use std::net::TcpListener;
use std::sync::Arc;

use common::*;
use dipqrb::certifier::DiMode;
use dipqrb::photonic_sim::OpticalModel;
use dipqrb::protocol::{run_session, ProtocolConfig, SessionParams, SessionStatus, Transcript};
use dipqrb::transport::{connect, run_client, Server, ServerOptions};

fn base_params(n: u64) -> SessionParams {
    SessionParams::new(n, 0.1, &OpticalModel::default(), seeds(7, 0, 9), DiMode::SemiDi)
}

/// Client `k`'s view of session `k` on a server built with `Server::with_model`.
fn client_config(n: u64, k: u64) -> ProtocolConfig {
    open_config(n, 0.1, seeds(7 + k, 500 + k, 9 + k), DiMode::SemiDi)
}

fn server(n: u64, opts: ServerOptions) -> Arc<Server> {
    Server::with_model(base_params(n), OpticalModel::default(), opts)
}

fn loopback_sessions(n: u64, clients: u64, opts: ServerOptions) -> Vec<(u64, Transcript)> {
    let srv = server(n, opts);
    let handles: Vec<_> = (0..clients)
        .map(|k| {
            let (mut chan, server_thread) = srv.connect_loopback();
            let client = std::thread::spawn(move || {
                let r = run_client(&mut chan, &client_config(n, k), &OpticalModel::default(), k).unwrap();
                (r.session_id, r.transcript)
            });
            (client, server_thread)
        })
        .collect();
    handles
        .into_iter()
        .map(|(c, s)| {
            let _ = s.join().unwrap();
            c.join().unwrap()
        })
        .collect()
}

fn tcp_sessions(n: u64, clients: u64, opts: ServerOptions) -> Vec<(u64, Transcript)> {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let srv = server(n, opts);
    let acceptor = std::thread::spawn(move || srv.serve(listener, Some(clients as usize)).unwrap());
    let clients: Vec<_> = (0..clients)
        .map(|k| {
            std::thread::spawn(move || {
                let mut chan = connect(addr).unwrap();
                let r = run_client(&mut chan, &client_config(n, k), &OpticalModel::default(), k).unwrap();
                (r.session_id, r.transcript)
            })
        })
        .collect();
    let out = clients.into_iter().map(|c| c.join().unwrap()).collect();
    for h in acceptor.join().unwrap() {
        let _ = h.join().unwrap();
    }
    out
}

#[test]
fn three_loopback_clients() {
    let out = loopback_sessions(100, 3, ServerOptions::default());
    let mut ids: Vec<u64> = out.iter().map(|(id, _)| *id).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 3);
    for (_, t) in &out {
        assert_eq!(t.status, SessionStatus::Completed);
        assert_eq!(t.records.len(), 100);
    }
}

#[test]
fn loopback_matches_in_process() {
    let opts = ServerOptions { ack_every: 64, fail_after: None };
    let out = loopback_sessions(1000, 2, opts);
    for (id, t) in out {
        let local = run_session(&client_config(1000, id), &OpticalModel::default()).unwrap();
        assert_eq!(t.records, local.records);
        assert_eq!(t.frequencies, local.frequencies);
        assert_eq!(t.config_hash, local.config_hash);
        assert_eq!(t.status, local.status);
    }
}

#[test]
fn dropped_connection_surfaces_as_transport_error() {
    let opts = ServerOptions { ack_every: 16, fail_after: Some(50) };
    for t in loopback_sessions(100, 1, opts).into_iter().chain(tcp_sessions(100, 1, opts)).map(|(_, t)| t) {
        assert_eq!(t.status, SessionStatus::TransportError);
        assert_eq!(t.records.len(), 50);
        assert!(t.abort_reason.as_deref().unwrap().starts_with("transport_error at i=50"));
        assert!(dipqrb::protocol::raw_string(&t).is_err());
    }
}

#[test]
fn socket_and_loopback_agree() {
    let opts = ServerOptions::default();
    let mut a = loopback_sessions(1000, 3, opts);
    let mut b = tcp_sessions(1000, 3, opts);
    a.sort_by_key(|(id, _)| *id);
    b.sort_by_key(|(id, _)| *id);
    for ((ia, ta), (ib, tb)) in a.iter().zip(&b) {
        assert_eq!(ia, ib);
        assert_eq!(ta.to_jsonl_bytes(), tb.to_jsonl_bytes());
    }
}

#[test]
fn mismatched_config_is_refused() {
    let srv = server(100, ServerOptions::default());
    let (mut chan, h) = srv.connect_loopback();
    let mut cfg = client_config(100, 0);
    cfg.params.gamma = [0.2; 2];
    let err = run_client(&mut chan, &cfg, &OpticalModel::default(), 0).unwrap_err();
    assert!(matches!(err, dipqrb::transport::TransportError::ConfigMismatch(_)));
    assert!(h.join().unwrap().is_err());
}
