//! Short-term anonymous URLs: `kotta://<bucket>/<key>?exp=<unix-seconds>&sig=<hex>`.
//!
//! The signature is HMAC-SHA256 over `bucket\nkey\nexpiry` under a server
//! secret.

use std::fmt;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::StorageError;
use crate::time::SimTime;

type HmacSha256 = Hmac<Sha256>;

pub const SCHEME: &str = "kotta://";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedUrl {
    pub bucket: String,
    pub key: String,
    /// Unix seconds; the URL is honored strictly before this instant.
    pub expiry: i64,
    pub signature: String,
}

impl SignedUrl {
    pub fn expires_at(&self) -> SimTime {
        SimTime::from_secs(self.expiry)
    }

    pub fn parse(s: &str) -> Result<Self, StorageError> {
        let bad = || StorageError::MalformedUrl(s.to_owned());
        let rest = s.strip_prefix(SCHEME).ok_or_else(bad)?;
        let (path, query) = rest.split_once('?').ok_or_else(bad)?;
        let (bucket, key) = path.split_once('/').ok_or_else(bad)?;
        if bucket.is_empty() || key.is_empty() {
            return Err(bad());
        }
        let mut exp = None;
        let mut sig = None;
        for pair in query.split('&') {
            match pair.split_once('=') {
                Some(("exp", v)) => exp = Some(v.parse::<i64>().map_err(|_| bad())?),
                Some(("sig", v)) => sig = Some(v.to_owned()),
                _ => return Err(bad()),
            }
        }
        Ok(SignedUrl {
            bucket: bucket.to_owned(),
            key: key.to_owned(),
            expiry: exp.ok_or_else(bad)?,
            signature: sig.ok_or_else(bad)?,
        })
    }
}

impl fmt::Display for SignedUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{SCHEME}{}/{}?exp={}&sig={}", self.bucket, self.key, self.expiry, self.signature)
    }
}

fn mac(secret: &[u8], bucket: &str, key: &str, expiry: i64) -> HmacSha256 {
    let mut mac = HmacSha256::new_from_slice(secret).expect("hmac accepts any key length");
    mac.update(canonical(bucket, key, expiry).as_bytes());
    mac
}

pub fn canonical(bucket: &str, key: &str, expiry: i64) -> String {
    format!("{bucket}\n{key}\n{expiry}")
}

pub fn sign(secret: &[u8], bucket: &str, key: &str, expiry: i64) -> SignedUrl {
    let sig = mac(secret, bucket, key, expiry).finalize().into_bytes();
    SignedUrl { bucket: bucket.to_owned(), key: key.to_owned(), expiry, signature: hex::encode(sig) }
}

/// Checks the authenticator first, then expiry.
pub fn verify(secret: &[u8], url: &SignedUrl, now: SimTime) -> Result<(), StorageError> {
    let raw = hex::decode(&url.signature).map_err(|_| StorageError::BadSignature)?;
    mac(secret, &url.bucket, &url.key, url.expiry)
        .verify_slice(&raw)
        .map_err(|_| StorageError::BadSignature)?;
    if now >= url.expires_at() {
        return Err(StorageError::Expired);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SECRET: &[u8] = b"server-secret";

    #[test]
    fn text_form_round_trips() {
        let u = sign(SECRET, "results", "alice/job-1/out.csv", 3600);
        let s = u.to_string();
        assert!(s.starts_with("kotta://results/alice/job-1/out.csv?exp=3600&sig="));
        assert_eq!(SignedUrl::parse(&s).unwrap(), u);
    }

    #[test]
    fn expiry_is_exclusive() {
        let u = sign(SECRET, "b", "k", 10);
        assert!(verify(SECRET, &u, SimTime::from_millis(9_999)).is_ok());
        assert_eq!(verify(SECRET, &u, SimTime::from_secs(10)), Err(StorageError::Expired));
    }

    #[test]
    fn altered_fields_fail_signature() {
        let u = sign(SECRET, "b", "k", 10);
        for altered in [
            SignedUrl { key: "k2".into(), ..u.clone() },
            SignedUrl { bucket: "c".into(), ..u.clone() },
            SignedUrl { expiry: 11, ..u.clone() },
            SignedUrl { signature: "zz".into(), ..u.clone() },
        ] {
            assert_eq!(verify(SECRET, &altered, SimTime::EPOCH), Err(StorageError::BadSignature));
        }
        assert_eq!(verify(b"other", &u, SimTime::EPOCH), Err(StorageError::BadSignature));
    }

    /// Textbook HMAC built from the bare hash, independent of the `hmac` crate.
    fn hmac_oracle(key: &[u8], msg: &[u8]) -> Vec<u8> {
        use sha2::Digest;
        let mut k = [0u8; 64];
        if key.len() > 64 {
            k[..32].copy_from_slice(&Sha256::digest(key));
        } else {
            k[..key.len()].copy_from_slice(key);
        }
        let ipad: Vec<u8> = k.iter().map(|b| b ^ 0x36).collect();
        let opad: Vec<u8> = k.iter().map(|b| b ^ 0x5c).collect();
        let inner = Sha256::new().chain_update(&ipad).chain_update(msg).finalize();
        Sha256::new().chain_update(&opad).chain_update(inner).finalize().to_vec()
    }

    #[test]
    fn signature_matches_recomputed_authenticator() {
        for (b, k, e) in [("b", "k", 0), ("results", "a/b/c.txt", 1_476_403_200), ("x", "y z", -5)] {
            let u = sign(SECRET, b, k, e);
            let expect = hmac_oracle(SECRET, format!("{b}\n{k}\n{e}").as_bytes());
            assert_eq!(u.signature, hex::encode(expect));
        }
    }

    #[test]
    fn malformed_urls() {
        for s in ["http://b/k?exp=1&sig=00", "kotta://b?exp=1&sig=00", "kotta://b/k", "kotta://b/k?exp=x&sig=00"] {
            assert!(matches!(SignedUrl::parse(s), Err(StorageError::MalformedUrl(_))), "{s}");
        }
    }
}
