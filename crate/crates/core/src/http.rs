//! HTTP exchange payloads and header rewriting rules.

use serde::{Deserialize, Serialize};

pub type HeaderList = Vec<(String, String)>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpRequest {
    pub method: String,
    /// Path and query, or an absolute URL.
    pub url: String,
    #[serde(default)]
    pub headers: HeaderList,
    #[serde(default)]
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    #[serde(default)]
    pub headers: HeaderList,
    #[serde(default)]
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn new(status: u16, body: impl Into<Vec<u8>>) -> Self {
        HttpResponse {
            status,
            headers: Vec::new(),
            body: body.into(),
        }
    }
}

pub fn header<'a>(headers: &'a HeaderList, name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(name))
        .map(|(_, v)| v.as_str())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeaderDirection {
    Request,
    Response,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeaderAction {
    Remove,
    Set,
    Append,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeaderRule {
    pub direction: HeaderDirection,
    pub action: HeaderAction,
    pub header_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid header rule for `{name}`: {reason}")]
pub struct InvalidHeaderRule {
    pub name: String,
    pub reason: &'static str,
}

impl HeaderRule {
    pub fn remove(direction: HeaderDirection, name: &str) -> Self {
        HeaderRule {
            direction,
            action: HeaderAction::Remove,
            header_name: name.to_string(),
            value: None,
        }
    }

    pub fn set(direction: HeaderDirection, name: &str, value: &str) -> Self {
        HeaderRule {
            direction,
            action: HeaderAction::Set,
            header_name: name.to_string(),
            value: Some(value.to_string()),
        }
    }

    pub fn validate(&self) -> Result<(), InvalidHeaderRule> {
        let err = |reason| InvalidHeaderRule {
            name: self.header_name.clone(),
            reason,
        };
        if self.header_name.is_empty()
            || !self
                .header_name
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b"!#$%&'*+-.^_`|~".contains(&b))
        {
            return Err(err("not a header token"));
        }
        match (self.action, &self.value) {
            (HeaderAction::Remove, Some(_)) => Err(err("remove takes no value")),
            (HeaderAction::Set | HeaderAction::Append, None) => Err(err("set/append need a value")),
            _ => Ok(()),
        }
    }
}

/// Applies the rules for `direction` in order. Names match
/// case-insensitively; `remove` and `set` affect every instance.
pub fn apply_header_rules(headers: &HeaderList, direction: HeaderDirection, rules: &[HeaderRule]) -> HeaderList {
    let mut out = headers.clone();
    for rule in rules.iter().filter(|r| r.direction == direction) {
        let name = &rule.header_name;
        match rule.action {
            HeaderAction::Remove => out.retain(|(k, _)| !k.eq_ignore_ascii_case(name)),
            HeaderAction::Set => {
                let value = rule.value.clone().unwrap_or_default();
                match out.iter().position(|(k, _)| k.eq_ignore_ascii_case(name)) {
                    Some(first) => {
                        out[first].1 = value;
                        let mut i = 0;
                        out.retain(|(k, _)| {
                            i += 1;
                            i - 1 == first || !k.eq_ignore_ascii_case(name)
                        });
                    }
                    None => out.push((name.clone(), value)),
                }
            }
            HeaderAction::Append => out.push((name.clone(), rule.value.clone().unwrap_or_default())),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(pairs: &[(&str, &str)]) -> HeaderList {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn removes_csp_case_insensitively() {
        let headers = h(&[
            ("Content-Security-Policy", "default-src 'self'"),
            ("content-type", "text/html"),
            ("content-security-policy", "frame-ancestors 'none'"),
        ]);
        let rules = [HeaderRule::remove(HeaderDirection::Response, "content-security-policy")];
        let out = apply_header_rules(&headers, HeaderDirection::Response, &rules);
        assert_eq!(out, h(&[("content-type", "text/html")]));
        // request-side application ignores response rules
        assert_eq!(apply_header_rules(&headers, HeaderDirection::Request, &rules), headers);
    }

    #[test]
    fn set_adds_or_replaces_all() {
        let rules = [HeaderRule::set(HeaderDirection::Response, "x-frame-options", "ALLOWALL")];
        let out = apply_header_rules(&h(&[("a", "1")]), HeaderDirection::Response, &rules);
        assert_eq!(out, h(&[("a", "1"), ("x-frame-options", "ALLOWALL")]));
        let out = apply_header_rules(
            &h(&[("X-Frame-Options", "DENY"), ("b", "2"), ("x-frame-options", "SAMEORIGIN")]),
            HeaderDirection::Response,
            &rules,
        );
        assert_eq!(out, h(&[("X-Frame-Options", "ALLOWALL"), ("b", "2")]));
    }

    #[test]
    fn append_and_identity() {
        let headers = h(&[("vary", "origin")]);
        assert_eq!(apply_header_rules(&headers, HeaderDirection::Response, &[]), headers);
        let rule = HeaderRule {
            direction: HeaderDirection::Response,
            action: HeaderAction::Append,
            header_name: "vary".into(),
            value: Some("cookie".into()),
        };
        let out = apply_header_rules(&headers, HeaderDirection::Response, &[rule]);
        assert_eq!(out, h(&[("vary", "origin"), ("vary", "cookie")]));
    }

    #[test]
    fn rule_validation() {
        assert!(HeaderRule::remove(HeaderDirection::Request, "cookie").validate().is_ok());
        let mut bad = HeaderRule::remove(HeaderDirection::Request, "cookie");
        bad.value = Some("x".into());
        assert!(bad.validate().is_err());
        let mut bad = HeaderRule::set(HeaderDirection::Request, "x", "y");
        bad.value = None;
        assert!(bad.validate().is_err());
        assert!(HeaderRule::remove(HeaderDirection::Request, "bad header").validate().is_err());
    }
}
