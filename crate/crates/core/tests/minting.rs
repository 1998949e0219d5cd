use std::time::Duration;

use credbroker_core::identity::SpiffeId;
use credbroker_core::minting::{
    verify_credential, verify_envelope, Credential, CredentialKind, CredentialScope, Minter,
    MintingKey, Rejection,
};
use credbroker_core::policy::{Decision, EffectiveObligations, Outcome, PolicyVersion};
use credbroker_core::Timestamp;
use hmac::{Hmac, Mac};
use proptest::prelude::*;
use sha2::Sha256;

const T0: Timestamp = Timestamp::from_unix(1_760_000_000);
const CAP: Duration = Duration::from_secs(900);

fn allow(cap: u64) -> Decision {
    Decision {
        outcome: Outcome::Allow,
        matched_rule_ids: vec!["r".into()],
        effective_obligations: EffectiveObligations {
            approval_required: false,
            ttl_cap: Duration::from_secs(cap),
        },
        evaluated_at: T0,
        policy_version: PolicyVersion::of_text(""),
    }
}

fn scope() -> CredentialScope {
    CredentialScope::new(
        SpiffeId::parse("spiffe://ci/org/build").unwrap(),
        "s3://bucket",
        "read",
    )
}

fn minter() -> Minter {
    Minter::with_seed(MintingKey::from_bytes([9; 32]), CAP, 1)
}

/// Recomputes the proof with an HMAC instance independent of the minter,
/// over the canonical JSON of every non-proof field.
fn oracle_proof(c: &Credential, key: &[u8; 32]) -> Vec<u8> {
    let mut fields = serde_json::to_value(c).unwrap();
    fields.as_object_mut().unwrap().remove("proof");
    let body = sorted_json(&fields);
    let mut mac = Hmac::<Sha256>::new_from_slice(key).unwrap();
    mac.update(body.as_bytes());
    mac.finalize().into_bytes().to_vec()
}

fn sorted_json(v: &serde_json::Value) -> String {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let mut keys: Vec<_> = map.keys().collect();
            keys.sort();
            let inner: Vec<String> = keys
                .iter()
                .map(|k| format!("{}:{}", Value::String(k.to_string()), sorted_json(&map[*k])))
                .collect();
            format!("{{{}}}", inner.join(","))
        }
        Value::Array(items) => format!(
            "[{}]",
            items.iter().map(sorted_json).collect::<Vec<_>>().join(",")
        ),
        other => other.to_string(),
    }
}

#[test]
fn proof_matches_independent_hmac() {
    let m = minter();
    for kind in CredentialKind::ALL {
        let c = m
            .mint(kind, scope(), Duration::from_secs(120), &allow(900), 4, T0)
            .unwrap();
        assert_eq!(c.proof, oracle_proof(&c, &[9; 32]));
        assert_eq!(c.proof_alg, "hmac-sha256");
    }
}

#[test]
fn every_single_byte_envelope_mutation_is_rejected() {
    let key = MintingKey::from_bytes([9; 32]);
    let c = minter()
        .mint(
            CredentialKind::StsLike,
            scope(),
            Duration::from_secs(120),
            &allow(900),
            4,
            T0,
        )
        .unwrap();
    let envelope = c.to_envelope();
    assert!(verify_envelope(&envelope, &scope(), T0, &key).is_ok());
    let bytes = envelope.as_bytes();
    for i in 0..bytes.len() {
        for mask in [0x01u8, 0x20, 0x80] {
            let mut edited = bytes.to_vec();
            edited[i] ^= mask;
            let text = String::from_utf8_lossy(&edited);
            assert!(
                verify_envelope(&text, &scope(), T0, &key).is_err(),
                "mutation at byte {i} accepted"
            );
        }
    }
}

#[test]
fn other_keys_cannot_verify_or_forge() {
    let c = minter()
        .mint(
            CredentialKind::SessionToken,
            scope(),
            Duration::from_secs(60),
            &allow(900),
            1,
            T0,
        )
        .unwrap();
    assert_eq!(
        verify_credential(&c, &scope(), T0, &MintingKey::from_bytes([8; 32])),
        Err(Rejection::BadProof)
    );
    // a forger who knows the format but not the key
    let mut forged = c.clone();
    forged.expires_at = Timestamp::from_unix(T0.unix() + 86_400);
    forged.proof = oracle_proof(&forged, &[8; 32]);
    assert_eq!(
        verify_credential(
            &forged,
            &scope(),
            T0 + Duration::from_secs(70),
            &MintingKey::from_bytes([9; 32])
        ),
        Err(Rejection::BadProof)
    );
}

#[test]
fn no_standing_secrets() {
    // no credential outlives the global cap, whatever is asked for
    let m = minter();
    for ttl in [1, 60, 900, 901, 3600, u32::MAX as u64] {
        let c = m
            .mint(
                CredentialKind::SecretLease,
                scope(),
                Duration::from_secs(ttl),
                &allow(900),
                1,
                T0,
            )
            .unwrap();
        assert!(c.lifetime() <= CAP);
        let key = MintingKey::from_bytes([9; 32]);
        assert_eq!(
            verify_credential(&c, &scope(), c.expires_at, &key),
            Err(Rejection::Expired)
        );
    }
    assert_eq!(m.purge_expired_leases(T0 + CAP), 6);
    assert_eq!(m.outstanding_leases(), 0);
}

proptest! {
    #[test]
    fn lifetime_is_min_of_request_cap_and_global(req in 1u64..10_000, cap in 1u64..2000, offset in 0i64..100_000) {
        let now = Timestamp::from_unix(T0.unix() + offset);
        let c = minter()
            .mint(CredentialKind::SessionToken, scope(), Duration::from_secs(req), &allow(cap), 1, now)
            .unwrap();
        let expected = req.min(cap).min(CAP.as_secs());
        prop_assert_eq!(c.lifetime(), Duration::from_secs(expected));
        prop_assert_eq!(c.not_before, now);
        let key = MintingKey::from_bytes([9; 32]);
        prop_assert!(verify_credential(&c, &scope(), now, &key).is_ok());
        prop_assert!(verify_credential(&c, &scope(), c.expires_at - Duration::from_secs(1), &key).is_ok());
        prop_assert_eq!(verify_credential(&c, &scope(), c.expires_at, &key), Err(Rejection::Expired));
    }

    #[test]
    fn scope_is_bound_field_for_field(resource in "[a-z:/]{1,12}", action in "[a-z]{1,6}") {
        let key = MintingKey::from_bytes([9; 32]);
        let c = minter()
            .mint(CredentialKind::SessionToken, scope(), Duration::from_secs(60), &allow(900), 1, T0)
            .unwrap();
        let presented = CredentialScope::new(scope().subject, resource.clone(), action.clone());
        let same = resource == "s3://bucket" && action == "read";
        prop_assert_eq!(verify_credential(&c, &presented, T0, &key).is_ok(), same);
    }
}
