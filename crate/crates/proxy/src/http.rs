//! One proxied HTTP exchange: request dispatch, header rules, upstream
//! call, response dispatch. Request and response share one session so
//! transforms can correlate them through the state document.

use rtcshim_core::engine::WireMessage;
use rtcshim_core::http::{apply_header_rules, HeaderDirection, HeaderList, HttpRequest, HttpResponse};
use rtcshim_core::{CategoryId, DispatchOutcome, InterceptContext, Payload};

use crate::fault::{FaultEffect, FaultEffectKind, FaultRng};
use crate::record::{Direction, Disposition};
use crate::server::{is_hop_by_hop, Proxy};

fn summary(r: &HttpRequest) -> WireMessage {
    WireMessage::Text(format!("{} {}", r.method, r.url))
}

fn status_line(r: &HttpResponse) -> WireMessage {
    WireMessage::Text(r.status.to_string())
}

fn local(status: u16, body: &str) -> HttpResponse {
    let mut r = HttpResponse::new(status, body.as_bytes().to_vec());
    r.headers.push(("content-type".into(), "text/plain; charset=utf-8".into()));
    r
}

impl Proxy {
    fn security(&self, session: &str, context: &str, direction: HeaderDirection, headers: HeaderList) -> HeaderList {
        let mut ctx = match direction {
            HeaderDirection::Request => InterceptContext::method(session, context),
            HeaderDirection::Response => InterceptContext::event(session, context),
        };
        let headers = match self
            .engine
            .dispatch(CategoryId::Security, &mut ctx, Payload::Headers { direction, headers: headers.clone() })
        {
            DispatchOutcome::Modified(Payload::Headers { headers, .. }) => headers,
            _ => headers,
        };
        apply_header_rules(&headers, direction, &self.header_rules())
    }

    fn effect(&self, session: &str, kind: FaultEffectKind) {
        self.registry.effect(
            session,
            FaultEffect {
                t_ms: self.registry.now_ms(),
                direction: Some(Direction::C2s),
                message: Some(1),
                kind,
            },
        );
    }

    /// Runs one exchange. `request.url` is the absolute upstream URL.
    pub async fn exchange(&self, client: &str, mut request: HttpRequest) -> HttpResponse {
        let session = self.registry.open("http", client, &request.url);
        let policy = self.fault_policy();
        let mut rng = FaultRng::new(self.engine.seed(), &session, Direction::C2s);

        if let Some(to) = policy.rewrite_url(&request.url) {
            self.effect(&session, FaultEffectKind::UrlRewrite { from: request.url.clone(), to: to.clone() });
            request.url = to;
            self.registry.set_upstream(&session, &request.url);
        }

        let mut answered = None;
        for (i, rule) in policy.fake_responses.iter().enumerate() {
            if rule.matches(&request.url) && (rule.probability >= 1.0 || rng.roll(rule.probability)) {
                self.effect(&session, FaultEffectKind::FakeResponse { rule: i });
                let body = rule.body.clone().unwrap_or_default();
                answered = Some(HttpResponse::new(rule.status.unwrap_or(200), body.into_bytes()));
                break;
            }
        }

        if answered.is_none() {
            let mut ctx = InterceptContext::method(&session, "request");
            match self
                .engine
                .dispatch(CategoryId::Request, &mut ctx, Payload::HttpRequest(request.clone()))
            {
                DispatchOutcome::ShortCircuit(Payload::HttpResponse(r)) => answered = Some(r),
                DispatchOutcome::ShortCircuit(_) => answered = Some(local(403, "request refused by proxy")),
                DispatchOutcome::Modified(Payload::HttpRequest(r)) => request = r,
                _ => {}
            }
        }

        let (response, disposition) = match answered {
            Some(r) => (r, Disposition::AnsweredLocally),
            None => {
                request.headers = self.security(&session, "request", HeaderDirection::Request, request.headers);
                let dropped = policy.drop_prob > 0.0 && rng.roll(policy.drop_prob);
                if dropped {
                    self.effect(&session, FaultEffectKind::Drop);
                    (local(502, "dropped by fault policy"), Disposition::Dropped)
                } else {
                    let delay = rng.delay(policy.delay);
                    if delay > 0 {
                        self.effect(&session, FaultEffectKind::Delay { ms: delay });
                        tokio::time::sleep(std::time::Duration::from_millis(delay)).await;
                    }
                    (self.forward(&request).await, Disposition::Forwarded)
                }
            }
        };
        self.registry
            .record(&session, Direction::C2s, summary(&request), None, disposition, 0);

        let mut ctx = InterceptContext::event(&session, "response");
        let mut response = match self
            .engine
            .dispatch(CategoryId::Request, &mut ctx, Payload::HttpResponse(response.clone()))
        {
            DispatchOutcome::Modified(Payload::HttpResponse(r)) | DispatchOutcome::ShortCircuit(Payload::HttpResponse(r)) => r,
            _ => response,
        };
        response.headers = self.security(&session, "response", HeaderDirection::Response, response.headers);
        let back = if disposition == Disposition::Forwarded {
            Disposition::Forwarded
        } else {
            Disposition::Synthesized
        };
        self.registry
            .record(&session, Direction::S2c, status_line(&response), None, back, 0);
        self.engine.drop_session(&session);
        self.registry.close(&session, "complete");
        response
    }

    async fn forward(&self, request: &HttpRequest) -> HttpResponse {
        let Ok(method) = reqwest::Method::from_bytes(request.method.as_bytes()) else {
            return local(400, "bad method");
        };
        let mut builder = self
            .client
            .request(method, &request.url)
            .timeout(self.timeout)
            .body(request.body.clone());
        for (k, v) in &request.headers {
            if !is_hop_by_hop(k) {
                builder = builder.header(k.as_str(), v.as_str());
            }
        }
        let upstream = match builder.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return local(504, "upstream timeout"),
            Err(e) => {
                tracing::warn!(url = %request.url, error = %e, "upstream request failed");
                return local(502, "upstream unreachable");
            }
        };
        let status = upstream.status().as_u16();
        let headers: HeaderList = upstream
            .headers()
            .iter()
            .map(|(k, v)| (k.as_str().to_string(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
            .collect();
        match upstream.bytes().await {
            Ok(body) => HttpResponse {
                status,
                headers,
                body: body.to_vec(),
            },
            Err(e) if e.is_timeout() => local(504, "upstream timeout"),
            Err(_) => local(502, "upstream body unreadable"),
        }
    }
}
