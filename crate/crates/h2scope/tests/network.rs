//! Prober and verifier behavior against hermetic TLS and cleartext fixtures.

use std::collections::HashMap;
use std::time::Duration;

use h2scope::fixtures::{CannedResponse, CleartextBehavior, CleartextFixture, TlsFixture};
use h2scope::prober::{probe_host, CleartextUpgrade, Mechanism, ProbeConfig, ProbeErrorClass};
use h2scope::protocol::ProtocolId;
use h2scope::tlsutil::FixtureIdentity;
use h2scope::verifier::{verify_h2, Classification, VerifyConfig};

fn fast_probe_cfg() -> ProbeConfig {
    ProbeConfig {
        connect_timeout: Duration::from_secs(2),
        handshake_timeout: Duration::from_secs(2),
        retries: 0,
        cleartext_port: None,
        ..ProbeConfig::default()
    }
}

fn root_route(body: &str) -> HashMap<String, CannedResponse> {
    HashMap::from([("/".to_string(), CannedResponse::ok(body.to_string()))])
}

fn tokens(list: &[&str]) -> Vec<ProtocolId> {
    list.iter().map(|t| ProtocolId::new(*t).unwrap()).collect()
}

#[tokio::test]
async fn announcement_recovery_in_server_preference_order() {
    let identity = FixtureIdentity::generate();
    let fixture = TlsFixture::spawn(&identity, &["h2", "spdy/3.1", "http/1.1"], root_route("ok"))
        .await
        .unwrap();
    let cfg = ProbeConfig {
        resolve_override: Some(fixture.addr),
        ..fast_probe_cfg()
    };
    let record = probe_host("localhost", fixture.addr.port(), &cfg).await;
    assert_eq!(record.error, None);
    assert_eq!(record.mechanism, Mechanism::Alpn);
    assert_eq!(record.announced, tokens(&["h2", "spdy/3.1", "http/1.1"]));
    assert_eq!(record.negotiated, Some(ProtocolId::new("h2").unwrap()));
    assert!(record.multi_handshake);
}

#[tokio::test]
async fn single_token_announcements() {
    let identity = FixtureIdentity::generate();
    for announce in [vec!["http/1.1"], vec!["h2-17"]] {
        let fixture = TlsFixture::spawn(&identity, &announce, root_route("ok"))
            .await
            .unwrap();
        let cfg = ProbeConfig {
            resolve_override: Some(fixture.addr),
            ..fast_probe_cfg()
        };
        let record = probe_host("localhost", fixture.addr.port(), &cfg).await;
        assert_eq!(record.error, None, "{announce:?}");
        assert_eq!(record.announced, tokens(&announce), "{announce:?}");
        // Recovering a one-token list still takes a second handshake to
        // observe the terminating no-overlap alert.
        assert_eq!(record.negotiated, Some(ProtocolId::new(announce[0]).unwrap()));
    }
}

#[tokio::test]
async fn unreachable_host_reports_no_endpoint_and_no_announcement() {
    // Bind-and-drop to get a port that is closed right now.
    let closed = {
        let l = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        l.local_addr().unwrap()
    };
    let cfg = ProbeConfig {
        resolve_override: Some(closed),
        ..fast_probe_cfg()
    };
    let record = probe_host("localhost", closed.port(), &cfg).await;
    assert_eq!(record.error, Some(ProbeErrorClass::NoTlsEndpoint));
    assert!(record.announced.is_empty());
    assert_eq!(record.negotiated, None);
    assert_eq!(record.mechanism, Mechanism::None);
}

#[tokio::test]
async fn cleartext_upgrade_and_quic_advertisement() {
    let identity = FixtureIdentity::generate();
    let tls = TlsFixture::spawn(&identity, &["h2", "http/1.1"], root_route("ok"))
        .await
        .unwrap();

    let upgrading = CleartextFixture::spawn(CleartextBehavior::H2cUpgrade)
        .await
        .unwrap();
    let cfg = ProbeConfig {
        resolve_override: Some(tls.addr),
        cleartext_port: Some(upgrading.addr.port()),
        ..fast_probe_cfg()
    };
    let record = probe_host("localhost", tls.addr.port(), &cfg).await;
    assert_eq!(record.cleartext_upgrade, CleartextUpgrade::Supported);
    assert!(!record.quic_advertised);

    let plain_with_quic = CleartextFixture::spawn(CleartextBehavior::PlainH1 {
        extra_headers: vec![("Alt-Svc".into(), "h3=\":443\"; ma=86400".into())],
    })
    .await
    .unwrap();
    let cfg = ProbeConfig {
        resolve_override: Some(tls.addr),
        cleartext_port: Some(plain_with_quic.addr.port()),
        ..fast_probe_cfg()
    };
    let record = probe_host("localhost", tls.addr.port(), &cfg).await;
    assert_eq!(record.cleartext_upgrade, CleartextUpgrade::Unsupported);
    assert!(record.quic_advertised);

    // Announcement recovery is unaffected by the cleartext findings.
    assert_eq!(record.announced, tokens(&["h2", "http/1.1"]));
}

fn verify_cfg(resolve: &[(&str, std::net::SocketAddr)]) -> VerifyConfig {
    VerifyConfig {
        connect_timeout: Duration::from_secs(2),
        request_timeout: Duration::from_secs(5),
        resolve: resolve
            .iter()
            .map(|(h, a)| (h.to_string(), *a))
            .collect(),
        ..VerifyConfig::default()
    }
}

#[tokio::test]
async fn verifier_direct_h2_root() {
    let identity = FixtureIdentity::generate();
    let fixture = TlsFixture::spawn(&identity, &["h2", "http/1.1"], root_route("hello world"))
        .await
        .unwrap();
    let cfg = verify_cfg(&[("fixture.test", fixture.addr)]);
    let verdict = verify_h2(&format!("fixture.test:{}", fixture.addr.port()), &cfg).await;
    assert!(verdict.serves_h2);
    assert_eq!(verdict.classification, Classification::ServesH2);
    assert_eq!(verdict.root_size, Some(11));
    assert_eq!(verdict.chain.hops.len(), 1);
    assert_eq!(verdict.terminal_domain.as_deref(), Some("fixture.test"));
}

#[tokio::test]
async fn verifier_follows_redirect_onto_h1() {
    let identity = FixtureIdentity::generate();
    let h1_target = TlsFixture::spawn(&identity, &["http/1.1"], root_route("h1 only"))
        .await
        .unwrap();
    let redirecting = TlsFixture::spawn(
        &identity,
        &["h2", "http/1.1"],
        HashMap::from([(
            "/".to_string(),
            CannedResponse::redirect(
                301,
                &format!("https://b.fixture.test:{}/", h1_target.addr.port()),
            ),
        )]),
    )
    .await
    .unwrap();
    let cfg = verify_cfg(&[
        ("a.fixture.test", redirecting.addr),
        ("b.fixture.test", h1_target.addr),
    ]);
    let verdict = verify_h2(&format!("a.fixture.test:{}", redirecting.addr.port()), &cfg).await;
    assert!(!verdict.serves_h2);
    assert_eq!(verdict.classification, Classification::RedirectToH1);
    assert_eq!(verdict.chain.hops.len(), 2);
    assert_eq!(verdict.chain.hops[0].status, 301);
    assert_eq!(verdict.terminal_domain.as_deref(), Some("b.fixture.test"));
}

#[tokio::test]
async fn verifier_h1_only_root() {
    let identity = FixtureIdentity::generate();
    let fixture = TlsFixture::spawn(&identity, &["http/1.1"], root_route("plain"))
        .await
        .unwrap();
    let cfg = verify_cfg(&[("fixture.test", fixture.addr)]);
    let verdict = verify_h2(&format!("fixture.test:{}", fixture.addr.port()), &cfg).await;
    assert_eq!(verdict.classification, Classification::H1OnlyRoot);
    assert_eq!(verdict.root_size, None);
}

#[tokio::test]
async fn verifier_redirect_loop_is_bounded() {
    let identity = FixtureIdentity::generate();
    // Self-redirect; the port is known only after binding, so route to the
    // resolve-mapped hostname and patch the port via a second fixture spawn.
    let looping = TlsFixture::spawn(
        &identity,
        &["h2"],
        HashMap::from([(
            "/".to_string(),
            CannedResponse::redirect(302, "/"),
        )]),
    )
    .await
    .unwrap();
    let cfg = verify_cfg(&[("fixture.test", looping.addr)]);
    let verdict = verify_h2(&format!("fixture.test:{}", looping.addr.port()), &cfg).await;
    assert_eq!(verdict.classification, Classification::ProtocolError);
    assert_eq!(verdict.reason.as_deref(), Some("RedirectLoop"));
    // max_redirects=10 means at most 11 hops were attempted
    assert_eq!(verdict.chain.hops.len(), 11);
}

#[tokio::test]
async fn verifier_network_error_on_closed_port() {
    let closed = {
        let l = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        l.local_addr().unwrap()
    };
    let cfg = verify_cfg(&[("fixture.test", closed)]);
    let verdict = verify_h2(&format!("fixture.test:{}", closed.port()), &cfg).await;
    assert_eq!(verdict.classification, Classification::NetworkError);
    assert!(!verdict.serves_h2);
}
