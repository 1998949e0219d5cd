use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Claims, SpiffeId};
use crate::canonical;
use crate::Timestamp;

/// Signature algorithm label carried in the token header.
pub const TOKEN_ALG: &str = "EdDSA";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenFormatError {
    #[error("token must have three dot-separated segments")]
    SegmentCount,
    #[error("segment {0} is not valid base64url")]
    Base64(&'static str),
    #[error("segment {segment} is not a valid record: {message}")]
    Record {
        segment: &'static str,
        message: String,
    },
    #[error("segment {0} is not in canonical form")]
    NonCanonical(&'static str),
    #[error("unsupported algorithm {0:?}")]
    UnsupportedAlgorithm(String),
}

/// A signed identity assertion, the broker's authentication input.
///
/// Wire form is JWT-shaped: `b64(header).b64(payload).b64(signature)` where
/// header and payload are canonical JSON and the signature covers the first
/// two segments exactly as transmitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadToken {
    pub subject: SpiffeId,
    pub audience: String,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
    pub claims: Claims,
    pub key_id: String,
    pub signature: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    alg: String,
    kid: String,
    typ: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Payload {
    aud: String,
    claims: Claims,
    exp: i64,
    iat: i64,
    sub: SpiffeId,
}

impl WorkloadToken {
    /// The bytes covered by the signature: `b64(header) "." b64(payload)`.
    pub fn signing_input(&self) -> Vec<u8> {
        let header = Header {
            alg: TOKEN_ALG.to_owned(),
            kid: self.key_id.clone(),
            typ: "JWT".to_owned(),
        };
        let payload = Payload {
            aud: self.audience.clone(),
            claims: self.claims.clone(),
            exp: self.expires_at.unix(),
            iat: self.issued_at.unix(),
            sub: self.subject.clone(),
        };
        // serialization of plain strings/ints/maps cannot fail
        let header = canonical::to_canonical_bytes(&header).expect("header serializes");
        let payload = canonical::to_canonical_bytes(&payload).expect("payload serializes");
        let mut out = URL_SAFE_NO_PAD.encode(header).into_bytes();
        out.push(b'.');
        out.extend_from_slice(URL_SAFE_NO_PAD.encode(payload).as_bytes());
        out
    }

    pub fn encode(&self) -> String {
        let mut out = String::from_utf8(self.signing_input()).expect("base64 is ascii");
        out.push('.');
        out.push_str(&URL_SAFE_NO_PAD.encode(&self.signature));
        out
    }

    /// Decodes the wire form. Segments must be in canonical form so that a
    /// token has exactly one encoding.
    pub fn decode(text: &str) -> Result<Self, TokenFormatError> {
        let mut parts = text.split('.');
        let (Some(h), Some(p), Some(s), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(TokenFormatError::SegmentCount);
        };
        let header_bytes = URL_SAFE_NO_PAD
            .decode(h)
            .map_err(|_| TokenFormatError::Base64("header"))?;
        let payload_bytes = URL_SAFE_NO_PAD
            .decode(p)
            .map_err(|_| TokenFormatError::Base64("payload"))?;
        let signature = URL_SAFE_NO_PAD
            .decode(s)
            .map_err(|_| TokenFormatError::Base64("signature"))?;

        let header: Header = parse_record(&header_bytes, "header")?;
        let payload: Payload = parse_record(&payload_bytes, "payload")?;
        if header.alg != TOKEN_ALG || header.typ != "JWT" {
            return Err(TokenFormatError::UnsupportedAlgorithm(header.alg));
        }
        let token = WorkloadToken {
            subject: payload.sub,
            audience: payload.aud,
            issued_at: Timestamp::from_unix(payload.iat),
            expires_at: Timestamp::from_unix(payload.exp),
            claims: payload.claims,
            key_id: header.kid,
            signature,
        };
        let expected = token.signing_input();
        let (eh, ep) = split_signing_input(&expected);
        if eh != h.as_bytes() {
            return Err(TokenFormatError::NonCanonical("header"));
        }
        if ep != p.as_bytes() {
            return Err(TokenFormatError::NonCanonical("payload"));
        }
        Ok(token)
    }
}

fn parse_record<T: for<'de> Deserialize<'de>>(
    bytes: &[u8],
    segment: &'static str,
) -> Result<T, TokenFormatError> {
    serde_json::from_slice(bytes).map_err(|e| TokenFormatError::Record {
        segment,
        message: e.to_string(),
    })
}

fn split_signing_input(input: &[u8]) -> (&[u8], &[u8]) {
    let dot = input.iter().position(|&b| b == b'.').unwrap_or(input.len());
    (&input[..dot], &input[(dot + 1).min(input.len())..])
}
