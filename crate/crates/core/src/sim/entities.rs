use std::collections::{HashMap, HashSet};
use std::net::IpAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::unbounded;
use parking_lot::Mutex;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};

use super::record::{Outcome, Recorder, Stage};
use super::topology::ClockMode;
use super::SimError;
use crate::audit::{online_check, Decision, GapPolicy, OnlineContext};
use crate::chain::{
    build_first_block, build_next_block, build_next_block_across_gap, fields, finalize_auction_block, verify_chain,
    BlockBody, Chain, DataField, KeyLookup, Origin, SignedBlock, Signer, PENDING,
};
use crate::clock::Clock;
use crate::codec::{embed_openrtb, embed_query, extract_query, take_openrtb, CodecError};
use crate::crypto::{DomainCertificate, PublicKey};
use crate::keydir::KeyDirectory;
use crate::net::{Endpoint, EndpointRegistry, Request, Response, CERTIFICATE_PATH};
use crate::tuuid::{TransactionId, TuuidGenerator};

pub const AD_PATH: &str = "/ad";
pub const PAGE_PATH: &str = "/page";
pub const RTB_PATH: &str = "/openrtb";
pub const BID_PATH: &str = "/openrtb/bid";
pub const BILLING_PATH: &str = "/openrtb/billing";
pub const LOSS_PATH: &str = "/openrtb/loss";
pub const SERVE_PATH: &str = "/serve";
pub const SIGN_PATH: &str = "/sign";

/// Non-chain query parameter carrying the recorder trace id.
pub const TRACE_PARAM: &str = "rid";

/// Services every entity shares.
pub struct Shared {
    pub registry: Arc<EndpointRegistry>,
    pub recorder: Option<Arc<Recorder>>,
    pub clock: Arc<dyn Clock>,
    pub mode: ClockMode,
}

impl Shared {
    fn event(&self, trace: Option<&str>, entity: &str, event: &str, detail: Option<String>) {
        if let (Some(r), Some(t)) = (&self.recorder, trace) {
            r.event(t, entity, event, detail);
        }
    }

    fn stage(&self, trace: Option<&str>, entity: &str, stage: Stage, elapsed: Duration) {
        if let (Some(r), Some(t)) = (&self.recorder, trace) {
            r.stage(t, entity, stage, elapsed);
        }
    }

    fn finish(&self, trace: Option<&str>, outcome: Outcome) {
        if let (Some(r), Some(t)) = (&self.recorder, trace) {
            r.finish(t, outcome);
        }
    }

    fn call(&self, from: &str, domain: &str, request: Request) -> Response {
        match self.registry.call(domain, &request.from_partner(from)) {
            Ok(r) => r,
            Err(e) => Response {
                status: 502,
                body: e.to_string(),
            },
        }
    }
}

/// A domain, its signing key and its certificate.
pub struct Identity {
    pub signer: Signer,
    pub certificate: DomainCertificate,
    pub keys: Arc<KeyDirectory>,
}

impl Identity {
    pub fn domain(&self) -> &str {
        self.signer.domain()
    }

    fn certificate_response(&self) -> Response {
        Response::ok(self.certificate.to_document())
    }
}

/// Keys fetched for one chain, with the reason for each failure.
#[derive(Default)]
pub struct ResolvedKeys {
    keys: HashMap<String, PublicKey>,
    errors: HashMap<String, String>,
}

impl ResolvedKeys {
    pub fn resolve(dir: &KeyDirectory, chain: &Chain) -> Self {
        let mut out = Self::default();
        for block in chain.blocks() {
            let d = &block.body.signer_domain;
            if out.keys.contains_key(d) || out.errors.contains_key(d) {
                continue;
            }
            match dir.get_public_key(d) {
                Ok(k) => {
                    out.keys.insert(d.clone(), k);
                }
                Err(e) => {
                    out.errors.insert(d.clone(), e.to_string());
                }
            }
        }
        out
    }
}

impl KeyLookup for ResolvedKeys {
    fn lookup(&self, domain: &str) -> Result<PublicKey, String> {
        match self.keys.get(domain) {
            Some(k) => Ok(k.clone()),
            None => Err(self
                .errors
                .get(domain)
                .cloned()
                .unwrap_or_else(|| format!("no key fetched for {domain}"))),
        }
    }
}

/// Fetches keys and checks the chain, timing both stages.
fn check_incoming(
    shared: &Shared,
    trace: Option<&str>,
    id: &Identity,
    ctx: &OnlineContext,
    chain: &Chain,
) -> Decision {
    let t = Instant::now();
    let keys = ResolvedKeys::resolve(&id.keys, chain);
    shared.stage(trace, id.domain(), Stage::KeyRetrieval, t.elapsed());
    let t = Instant::now();
    let decision = online_check(ctx, chain, &keys);
    shared.stage(trace, id.domain(), Stage::Verify, t.elapsed());
    decision
}

/// Wire form of a rejection echoed upstream.
pub fn rejection(by: &str, reason: &str, detail: &str, tid: Option<TransactionId>) -> Response {
    Response {
        status: 403,
        body: json!({"rejected": {"by": by, "reason": reason, "detail": detail, "tid": tid.map(|t| t.to_string())}})
            .to_string(),
    }
}

/// `(by, reason, detail)` of a rejection response.
pub fn parse_rejection(resp: &Response) -> Option<(String, String, String)> {
    let v: Value = serde_json::from_str(&resp.body).ok()?;
    let r = v.get("rejected")?;
    let s = |k: &str| r.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
    Some((s("by"), s("reason"), s("detail")))
}

fn reject(shared: &Shared, trace: Option<&str>, by: &str, reason: &str, detail: &str, tid: Option<TransactionId>) -> Response {
    shared.event(trace, by, "rejected", Some(format!("{reason}: {detail}")));
    shared.finish(
        trace,
        Outcome::Rejected {
            by: by.to_string(),
            reason: reason.to_string(),
        },
    );
    rejection(by, reason, detail, tid)
}

fn fail(shared: &Shared, trace: Option<&str>, entity: &str, stage: &str, err: impl std::fmt::Display) -> Response {
    let error = err.to_string();
    shared.event(trace, entity, "failed", Some(format!("{stage}: {error}")));
    shared.finish(
        trace,
        Outcome::Failed {
            stage: stage.to_string(),
            error: error.clone(),
        },
    );
    Response {
        status: 500,
        body: error,
    }
}

/// Splits `https://host/path?query` into host and target.
pub fn split_url(url: &str) -> Option<(&str, &str)> {
    let rest = url.strip_prefix("https://").or_else(|| url.strip_prefix("http://"))?;
    let cut = rest.find('/').unwrap_or(rest.len());
    let target = if cut == rest.len() { "/" } else { &rest[cut..] };
    Some((&rest[..cut], target))
}

/// Decoded value of a plain query parameter.
pub fn query_param(url: &str, name: &str) -> Option<String> {
    let (_, q) = url.split_once('?')?;
    q.split('&').find_map(|p| {
        let (k, v) = p.split_once('=')?;
        (k == name).then(|| crate::codec::percent_decode(v).ok()).flatten()
    })
}

/// Replaces (or prepends) one query parameter.
pub fn with_query_param(url: &str, name: &str, value: &str) -> String {
    let (base, q) = url.split_once('?').unwrap_or((url, ""));
    let mut replaced = false;
    let mut parts: Vec<String> = q
        .split('&')
        .filter(|p| !p.is_empty())
        .map(|p| match p.split_once('=') {
            Some((k, _)) if k == name => {
                replaced = true;
                format!("{name}={}", crate::codec::percent_encode(value))
            }
            _ => p.to_string(),
        })
        .collect();
    if !replaced {
        parts.insert(0, format!("{name}={}", crate::codec::percent_encode(value)));
    }
    format!("{base}?{}", parts.join("&"))
}

// ---------------------------------------------------------------- publisher

#[derive(Debug, Clone)]
pub struct AdTag {
    pub url: String,
    pub trace: Option<String>,
    pub tid: Option<TransactionId>,
}

#[derive(Debug, Clone)]
pub struct Page {
    pub tags: Vec<AdTag>,
    /// Time spent generating ids and signing block 0 for every tag.
    pub signing_time: Duration,
}

impl Page {
    pub fn html(&self, title: &str) -> String {
        let mut out = format!("<!doctype html>\n<html><head><title>{title}</title></head><body>\n");
        for (i, tag) in self.tags.iter().enumerate() {
            out.push_str(&format!(
                "<div class=\"ad\" id=\"slot-{i}\"><script src=\"{}\"></script></div>\n",
                tag.url.replace('&', "&amp;")
            ));
        }
        out.push_str("</body></html>\n");
        out
    }
}

/// Ad-tag URLs of a page produced by [`Page::html`].
pub fn parse_page(html: &str) -> Vec<String> {
    html.split("<script src=\"")
        .skip(1)
        .filter_map(|s| s.split_once('"').map(|(u, _)| u.replace("&amp;", "&")))
        .collect()
}

pub struct Publisher {
    pub id: Identity,
    entry: String,
    generator: Mutex<TuuidGenerator>,
    max_ads: usize,
    shared: Arc<Shared>,
}

impl Publisher {
    pub(crate) fn new(id: Identity, entry: String, generator: TuuidGenerator, max_ads: usize, shared: Arc<Shared>) -> Self {
        Self {
            id,
            entry,
            generator: Mutex::new(generator),
            max_ads,
            shared,
        }
    }

    pub fn domain(&self) -> &str {
        self.id.domain()
    }

    /// Builds a page with `n_ads` ad-tags pointing at the sell-side entry.
    pub fn serve_page(&self, n_ads: usize, sign: bool, client_ip: IpAddr) -> Result<Page, SimError> {
        if n_ads == 0 || n_ads > self.max_ads {
            return Err(SimError::Config(format!("n_ads must be within 1..={}", self.max_ads)));
        }
        let base = format!("https://{}{AD_PATH}", self.entry);
        let page_url = format!("https://{}/", self.domain());
        let mut tags = Vec::with_capacity(n_ads);
        let mut signing_time = Duration::ZERO;
        for slot in 0..n_ads {
            let trace = self.shared.recorder.as_ref().map(|r| r.open());
            let slot_s = slot.to_string();
            let mut extra: Vec<(&str, &str)> = vec![("slot", &slot_s)];
            if let Some(t) = &trace {
                extra.push((TRACE_PARAM, t));
            }
            let (url, tid) = if sign {
                let t = Instant::now();
                let tid = self.generator.lock().generate().map_err(|e| SimError::Config(e.to_string()))?;
                let block = build_first_block(
                    tid,
                    client_ip,
                    &self.entry,
                    fields([("size", "300x250"), ("page", &page_url)])?,
                    &self.id.signer,
                )?;
                signing_time += t.elapsed();
                (embed_query(&Chain::from_first(block), &base, &extra)?, Some(tid))
            } else {
                extra.push(("size", "300x250"));
                let q: Vec<String> = extra
                    .iter()
                    .map(|(k, v)| format!("{k}={}", crate::codec::percent_encode(v)))
                    .collect();
                (format!("{base}?{}", q.join("&")), None)
            };
            if let (Some(r), Some(t)) = (&self.shared.recorder, &trace) {
                r.set_origin(t, tid.map(|t| t.to_string()), Some(crate::chain::canonical_ip(&client_ip)));
                r.event(t, self.domain(), if sign { "tag-signed" } else { "tag-served" }, None);
            }
            tags.push(AdTag { url, trace, tid });
        }
        Ok(Page { tags, signing_time })
    }
}

impl Endpoint for Publisher {
    fn handle(&self, req: &Request) -> Response {
        match req.path() {
            CERTIFICATE_PATH => self.id.certificate_response(),
            PAGE_PATH => {
                let mut n_ads = 1;
                let mut sign = true;
                for pair in req.query().unwrap_or("").split('&') {
                    match pair.split_once('=') {
                        Some(("ads", v)) => match v.parse() {
                            Ok(n) => n_ads = n,
                            Err(_) => return Response::bad_request("ads must be a number"),
                        },
                        Some(("sign", v)) => sign = v != "0",
                        _ => {}
                    }
                }
                let ip = req.remote_addr.unwrap_or(IpAddr::from([127, 0, 0, 1]));
                match self.serve_page(n_ads, sign, ip) {
                    Ok(page) => Response::ok(page.html(self.domain())),
                    Err(SimError::Config(e)) => Response::bad_request(e),
                    Err(e) => Response {
                        status: 500,
                        body: e.to_string(),
                    },
                }
            }
            _ => Response::not_found(),
        }
    }
}

// ---------------------------------------------------------------- ssp

pub struct Ssp {
    pub id: Identity,
    exchange: String,
    signing: bool,
    policy: GapPolicy,
    shared: Arc<Shared>,
}

impl Ssp {
    pub(crate) fn new(id: Identity, exchange: String, signing: bool, policy: GapPolicy, shared: Arc<Shared>) -> Self {
        Self {
            id,
            exchange,
            signing,
            policy,
            shared,
        }
    }

    /// Verifies the ad-tag's chain, appends this SSP's block and forwards the
    /// request to the exchange as OpenRTB.
    pub fn handle_ad_request(&self, req: &Request) -> Response {
        let me = self.id.domain();
        let (chain, view) = match extract_query(&req.target) {
            Ok(x) => x,
            Err(CodecError::AbsentChain) if !self.signing => return self.relay_plain(req),
            Err(e) => return rejection(me, "malformed", &e.to_string(), None),
        };
        let trace = view.get(TRACE_PARAM).map(str::to_string);
        let trace = trace.as_deref();
        let tid = chain.transaction_id();
        self.shared.event(trace, me, "ad-request", None);

        let chain = if self.signing {
            let mut ctx = OnlineContext::new(me);
            ctx.policy = self.policy;
            ctx.received_from = req.from.clone();
            match check_incoming(&self.shared, trace, &self.id, &ctx, &chain) {
                Decision::Reject { reason, detail } => {
                    return reject(&self.shared, trace, me, reason.label(), &detail, tid);
                }
                Decision::Accept { .. } => {}
            }
            let t = Instant::now();
            let block = build_next_block(&chain, &self.exchange, fields([("floor", "0.10")]).expect("static"), &self.id.signer);
            self.shared.stage(trace, me, Stage::Sign, t.elapsed());
            match block.and_then(|b| chain.with(b)) {
                Ok(c) => {
                    self.shared.event(trace, me, "signed", None);
                    c
                }
                Err(e) => return fail(&self.shared, trace, me, "sign", e),
            }
        } else {
            self.shared.event(trace, me, "relayed", None);
            chain
        };

        let id = trace.map(str::to_string).or(tid.map(|t| t.to_string())).unwrap_or_default();
        let slot = view.get("slot").unwrap_or("0");
        let ip = chain.origin().map(|o| crate::chain::canonical_ip(&o.client_ip));
        let request = json!({
            "id": id,
            "imp": [{"id": "1", "tagid": slot, "banner": {"w": 300, "h": 250}, "bidfloor": 0.10}],
            "device": {"ip": ip},
        });
        let body = match embed_openrtb(&chain, request) {
            Ok(b) => b,
            Err(e) => return fail(&self.shared, trace, me, "encode", e),
        };
        self.shared
            .call(me, &self.exchange, Request::post(RTB_PATH, body.to_string()))
    }
}

impl Ssp {
    /// A non-adopting SSP forwarding a request that carries no chain.
    fn relay_plain(&self, req: &Request) -> Response {
        let me = self.id.domain();
        let trace = query_param(&req.target, TRACE_PARAM);
        self.shared.event(trace.as_deref(), me, "relayed", None);
        let request = json!({
            "id": trace.unwrap_or_default(),
            "imp": [{"id": "1", "tagid": query_param(&req.target, "slot").unwrap_or_else(|| "0".into()),
                     "banner": {"w": 300, "h": 250}, "bidfloor": 0.10}],
            "device": {"ip": req.remote_addr.map(|a| crate::chain::canonical_ip(&a))},
        });
        self.shared
            .call(me, &self.exchange, Request::post(RTB_PATH, request.to_string()))
    }
}

impl Endpoint for Ssp {
    fn handle(&self, req: &Request) -> Response {
        match req.path() {
            CERTIFICATE_PATH => self.id.certificate_response(),
            AD_PATH => self.handle_ad_request(req),
            _ => Response::not_found(),
        }
    }
}

// ---------------------------------------------------------------- adx

#[derive(Debug, Clone, PartialEq)]
pub struct Bid {
    pub bidder: String,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionResult {
    pub winner: Option<Bid>,
    pub bids: Vec<Bid>,
    /// From launch to the close of bidding, by the simulation clock.
    pub elapsed: Duration,
}

/// Highest price wins; ties go to the lexicographically smallest domain.
pub fn select_winner(bids: &[Bid]) -> Option<Bid> {
    bids.iter()
        .filter(|b| b.price.is_finite())
        .max_by(|a, b| {
            a.price
                .partial_cmp(&b.price)
                .expect("finite")
                .then_with(|| b.bidder.cmp(&a.bidder))
        })
        .cloned()
}

pub struct AdExchange {
    pub id: Identity,
    bidders: Vec<String>,
    wait: Duration,
    policy: GapPolicy,
    shared: Arc<Shared>,
}

impl AdExchange {
    pub(crate) fn new(id: Identity, bidders: Vec<String>, wait: Duration, policy: GapPolicy, shared: Arc<Shared>) -> Self {
        Self {
            id,
            bidders,
            wait,
            policy,
            shared,
        }
    }

    pub fn auction_wait(&self) -> Duration {
        self.wait
    }

    fn handle_rtb(&self, req: &Request) -> Response {
        let me = self.id.domain();
        let mut message: Value = match serde_json::from_str(&req.body) {
            Ok(v) => v,
            Err(e) => return rejection(me, "malformed", &e.to_string(), None),
        };
        let (chain, _) = match take_openrtb(&mut message) {
            Ok(x) => x,
            Err(e) => return rejection(me, "malformed", &e.to_string(), None),
        };
        let trace_s = message["id"].as_str().map(str::to_string);
        let trace = trace_s.as_deref();
        let tid = chain.transaction_id();
        self.shared.event(trace, me, "bid-request", None);

        let mut ctx = OnlineContext::new(me);
        ctx.policy = self.policy;
        ctx.received_from = req.from.clone();
        let across_gap = match check_incoming(&self.shared, trace, &self.id, &ctx, &chain) {
            Decision::Reject { reason, detail } => return reject(&self.shared, trace, me, reason.label(), &detail, tid),
            Decision::Accept { across_gap, .. } => across_gap,
        };

        let auction_id = format!("{}-{}", me, message["id"].as_str().unwrap_or("0"));
        let auction_fields = vec![DataField::new("auction", auction_id).expect("valid")];
        let t = Instant::now();
        let temp = if across_gap {
            let forwarded_by = chain.custody().to_string();
            build_next_block_across_gap(&chain, &forwarded_by, PENDING, auction_fields, &self.id.signer)
        } else {
            build_next_block(&chain, PENDING, auction_fields, &self.id.signer)
        };
        self.shared.stage(trace, me, Stage::Sign, t.elapsed());
        let temp_chain = match temp.and_then(|b| chain.with(b)) {
            Ok(c) => c,
            Err(e) => return fail(&self.shared, trace, me, "temporary-block", e),
        };
        self.shared.event(
            trace,
            me,
            "auction-start",
            Some(format!("temporary-signature={}", temp_chain.last().signature)),
        );

        let result = self.run_auction(trace, &message, &temp_chain);
        let Some(winner) = result.winner.clone() else {
            self.shared.event(trace, me, "unsold", None);
            self.shared.finish(trace, Outcome::Unsold);
            return Response::no_content();
        };
        if let (Some(r), Some(t)) = (&self.shared.recorder, trace) {
            r.set_winner(t, &winner.bidder);
        }
        self.shared.event(
            trace,
            me,
            "auction-end",
            Some(format!("winner={} price={:.2} bids={}", winner.bidder, winner.price, result.bids.len())),
        );

        let t = Instant::now();
        let final_chain = finalize_auction_block(&temp_chain, &winner.bidder, &self.id.signer);
        self.shared.stage(trace, me, Stage::Sign, t.elapsed());
        let final_chain = match final_chain {
            Ok(c) => c,
            Err(e) => return fail(&self.shared, trace, me, "finalize", e),
        };
        for loser in result.bids.iter().filter(|b| b.bidder != winner.bidder) {
            let notice = json!({"id": message["id"], "reason": "lost", "price": winner.price});
            self.shared.call(me, &loser.bidder, Request::post(LOSS_PATH, notice.to_string()));
        }
        let resp = self.send_billing_notice(trace, &message, &final_chain, &winner);
        if resp.is_success() {
            let mut body: Value = serde_json::from_str(&resp.body).unwrap_or_else(|_| json!({}));
            body["winner"] = json!(winner.bidder);
            Response::ok(body.to_string())
        } else {
            resp
        }
    }

    /// Sends the billing notice carrying the final chain to the winner.
    pub fn send_billing_notice(&self, trace: Option<&str>, message: &Value, final_chain: &Chain, winner: &Bid) -> Response {
        let me = self.id.domain();
        let notice = json!({"id": message["id"], "price": winner.price});
        let notice = match embed_openrtb(final_chain, notice) {
            Ok(n) => n,
            Err(e) => return fail(&self.shared, trace, me, "billing", e),
        };
        self.shared.event(trace, me, "billing-sent", Some(winner.bidder.clone()));
        self.shared.call(me, &winner.bidder, Request::post(BILLING_PATH, notice.to_string()))
    }

    /// Offers the temporary chain to every bidder and keeps the bids that
    /// arrive before the wait elapses.
    pub fn run_auction(&self, trace: Option<&str>, message: &Value, temp_chain: &Chain) -> AuctionResult {
        let me = self.id.domain().to_string();
        let started = self.shared.clock.now_ns();
        let request = match embed_openrtb(temp_chain, message.clone()) {
            Ok(r) => r.to_string(),
            Err(_) => {
                return AuctionResult {
                    winner: None,
                    bids: vec![],
                    elapsed: Duration::ZERO,
                }
            }
        };
        let parse = |bidder: &str, resp: Response| -> Option<Bid> {
            if resp.status != 200 {
                return None;
            }
            let v: Value = serde_json::from_str(&resp.body).ok()?;
            Some(Bid {
                bidder: bidder.to_string(),
                price: v["price"].as_f64()?,
            })
        };

        let mut bids = Vec::new();
        match self.shared.mode {
            ClockMode::Virtual => {
                for bidder in &self.bidders {
                    let resp = self.shared.call(&me, bidder, Request::post(BID_PATH, request.clone()));
                    bids.extend(parse(bidder, resp));
                }
                self.shared.clock.sleep(self.wait);
            }
            ClockMode::System => {
                let launch = Instant::now();
                let deadline = launch + self.wait;
                let (tx, rx) = unbounded();
                for bidder in &self.bidders {
                    let tx = tx.clone();
                    let registry = self.shared.registry.clone();
                    let req = Request::post(BID_PATH, request.clone()).from_partner(me.clone());
                    let bidder = bidder.clone();
                    std::thread::spawn(move || {
                        let resp = registry.call(&bidder, &req);
                        let _ = tx.send((bidder, resp));
                    });
                }
                drop(tx);
                while let Ok((bidder, resp)) = rx.recv_deadline(deadline) {
                    if let Ok(resp) = resp {
                        bids.extend(parse(&bidder, resp));
                    }
                }
                let now = Instant::now();
                if now < deadline {
                    std::thread::sleep(deadline - now);
                }
            }
        }
        bids.sort_by(|a, b| a.bidder.cmp(&b.bidder));
        let elapsed = Duration::from_nanos(self.shared.clock.now_ns().saturating_sub(started));
        self.shared.event(trace, &me, "bidding-closed", Some(format!("{} ms", elapsed.as_millis())));
        AuctionResult {
            winner: select_winner(&bids),
            bids,
            elapsed,
        }
    }
}

impl Endpoint for AdExchange {
    fn handle(&self, req: &Request) -> Response {
        match req.path() {
            CERTIFICATE_PATH => self.id.certificate_response(),
            RTB_PATH => self.handle_rtb(req),
            _ => Response::not_found(),
        }
    }
}

// ---------------------------------------------------------------- dsp

pub struct Dsp {
    pub id: Identity,
    bid: Option<f64>,
    rng: Mutex<ChaCha20Rng>,
    delay: Duration,
    adserver: Option<String>,
    shared: Arc<Shared>,
    holdings: Mutex<Vec<(String, Chain)>>,
}

impl Dsp {
    pub(crate) fn new(
        id: Identity,
        bid: Option<f64>,
        rng: ChaCha20Rng,
        delay: Duration,
        adserver: Option<String>,
        shared: Arc<Shared>,
    ) -> Self {
        Self {
            id,
            bid,
            rng: Mutex::new(rng),
            delay,
            adserver,
            shared,
            holdings: Mutex::new(Vec::new()),
        }
    }

    /// Every chain this DSP has received or built, keyed by message id.
    pub fn holdings(&self) -> Vec<(String, Chain)> {
        self.holdings.lock().clone()
    }

    fn hold(&self, id: &str, chain: &Chain) {
        if self.shared.recorder.is_some() {
            self.holdings.lock().push((id.to_string(), chain.clone()));
        }
    }

    fn price(&self) -> f64 {
        match self.bid {
            Some(p) => p,
            None => (self.rng.lock().gen_range(10..500) as f64) / 100.0,
        }
    }

    fn handle_bid(&self, req: &Request) -> Response {
        let me = self.id.domain();
        let mut message: Value = match serde_json::from_str(&req.body) {
            Ok(v) => v,
            Err(e) => return rejection(me, "malformed", &e.to_string(), None),
        };
        let (chain, _) = match take_openrtb(&mut message) {
            Ok(x) => x,
            Err(e) => return rejection(me, "malformed", &e.to_string(), None),
        };
        let id = message["id"].as_str().unwrap_or_default().to_string();
        let trace = Some(id.as_str());
        let mut ctx = OnlineContext::new(me);
        ctx.accept_temporary = true;
        ctx.received_from = req.from.clone();
        if !chain.is_temporary() {
            return rejection(me, "malformed", "bid requests carry a temporary chain", chain.transaction_id());
        }
        if let Decision::Reject { reason, detail } = check_incoming(&self.shared, None, &self.id, &ctx, &chain) {
            self.shared.event(trace, me, "bid-declined", Some(format!("{reason}: {detail}")));
            return rejection(me, reason.label(), &detail, chain.transaction_id());
        }
        self.hold(&id, &chain);
        if !self.delay.is_zero() {
            self.shared.clock.sleep(self.delay);
        }
        let price = self.price();
        self.shared.event(trace, me, "bid", Some(format!("{price:.2}")));
        Response::ok(json!({"id": id, "bidder": me, "price": price}).to_string())
    }

    fn handle_billing(&self, req: &Request) -> Response {
        let me = self.id.domain();
        let mut message: Value = match serde_json::from_str(&req.body) {
            Ok(v) => v,
            Err(e) => return rejection(me, "malformed", &e.to_string(), None),
        };
        let (chain, _) = match take_openrtb(&mut message) {
            Ok(x) => x,
            Err(e) => return rejection(me, "malformed", &e.to_string(), None),
        };
        let id = message["id"].as_str().unwrap_or_default().to_string();
        let trace = Some(id.as_str());
        let tid = chain.transaction_id();
        self.shared.event(trace, me, "billing-received", None);
        let mut ctx = OnlineContext::new(me);
        ctx.received_from = req.from.clone();
        if let Decision::Reject { reason, detail } = check_incoming(&self.shared, None, &self.id, &ctx, &chain) {
            return reject(&self.shared, trace, me, reason.label(), &detail, tid);
        }
        self.hold(&id, &chain);

        let price = format!("{:.2}", message["price"].as_f64().unwrap_or_default());
        let creative = format!("cr-{}", me.split('.').next().unwrap_or(me));
        let block = build_next_block(
            &chain,
            me,
            fields([("advertiser", "acme-shoes"), ("campaign", "spring-sale"), ("creative", &creative), ("price", &price)])
                .expect("valid"),
            &self.id.signer,
        );
        let final_chain = match block.and_then(|b| chain.with(b)) {
            Ok(c) => c,
            Err(e) => return fail(&self.shared, trace, me, "final-block", e),
        };
        self.hold(&id, &final_chain);
        self.shared.event(trace, me, "final-signed", None);
        if let (Some(r), Some(t)) = (&self.shared.recorder, trace) {
            r.complete(t, &final_chain);
        }

        let adm = match &self.adserver {
            Some(server) => match embed_query(&final_chain, &format!("https://{server}{SERVE_PATH}"), &[(TRACE_PARAM, &id)]) {
                Ok(url) => url,
                Err(e) => return fail(&self.shared, trace, me, "delivery", e),
            },
            None => format!("<img src=\"https://{me}/creative/{creative}.png\">"),
        };
        Response::ok(json!({"id": id, "adm": adm}).to_string())
    }
}

impl Endpoint for Dsp {
    fn handle(&self, req: &Request) -> Response {
        match req.path() {
            CERTIFICATE_PATH => self.id.certificate_response(),
            BID_PATH => self.handle_bid(req),
            BILLING_PATH => self.handle_billing(req),
            LOSS_PATH => {
                let id = serde_json::from_str::<Value>(&req.body)
                    .ok()
                    .and_then(|v| v["id"].as_str().map(str::to_string));
                self.shared.event(id.as_deref(), self.id.domain(), "loss-notice", None);
                Response::no_content()
            }
            _ => Response::not_found(),
        }
    }
}

// ---------------------------------------------------------------- ad server

pub struct AdServer {
    domain: String,
    keys: Arc<KeyDirectory>,
    shared: Arc<Shared>,
}

impl AdServer {
    pub(crate) fn new(domain: String, keys: Arc<KeyDirectory>, shared: Arc<Shared>) -> Self {
        Self { domain, keys, shared }
    }

    fn serve(&self, req: &Request) -> Response {
        let me = &self.domain;
        let (chain, view) = match extract_query(&req.target) {
            Ok(x) => x,
            Err(e) => return rejection(me, "malformed", &e.to_string(), None),
        };
        let trace = view.get(TRACE_PARAM);
        let keys = ResolvedKeys::resolve(&self.keys, &chain);
        let report = verify_chain(&chain, &keys);
        if !report.is_valid() || chain.is_temporary() || chain.custody() != chain.last().body.signer_domain {
            let detail = format!("chain rejected at delivery: first invalid block {:?}", report.first_invalid_index);
            if let (Some(r), Some(t)) = (&self.shared.recorder, trace) {
                r.event(t, me, "delivery-refused", Some(detail.clone()));
            }
            return rejection(me, "bad-signature", &detail, chain.transaction_id());
        }
        self.shared.event(trace, me, "delivered", None);
        Response::ok(format!("<img src=\"https://{me}/creative.png\">"))
    }
}

impl Endpoint for AdServer {
    fn handle(&self, req: &Request) -> Response {
        match req.path() {
            SERVE_PATH => self.serve(req),
            _ => Response::not_found(),
        }
    }
}

// ---------------------------------------------------------------- app signer

/// Signs block 0 on behalf of mobile apps that cannot hold the publisher key.
pub struct AppSigner {
    domain: String,
    publisher: Signer,
    apps: HashSet<String>,
}

impl AppSigner {
    pub(crate) fn new(domain: String, publisher: Signer, apps: impl IntoIterator<Item = String>) -> Self {
        Self {
            domain,
            publisher,
            apps: apps.into_iter().collect(),
        }
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    /// Signs an app-built first block under the publisher's key. The body is
    /// signed exactly as received.
    pub fn remote_sign(&self, body: BlockBody) -> Result<SignedBlock, SimError> {
        if body.index != 0 || body.origin.is_none() || body.prev_signature.is_some() {
            return Err(SimError::Malformed("remote signing is only for first blocks".into()));
        }
        if body.signer_domain != self.publisher.domain() {
            return Err(SimError::Malformed(format!(
                "body names {} but this server signs for {}",
                body.signer_domain,
                self.publisher.domain()
            )));
        }
        let app = body
            .fields
            .iter()
            .find(|f| f.key() == "app")
            .map(|f| f.value().to_string())
            .ok_or_else(|| SimError::UnregisteredApp("<none>".into()))?;
        if !self.apps.contains(&app) {
            return Err(SimError::UnregisteredApp(app));
        }
        Ok(self.publisher.sign_body(body)?)
    }

    fn handle_sign(&self, req: &Request) -> Response {
        let body = match body_from_json(&req.body, self.publisher.domain()) {
            Ok(b) => b,
            Err(e) => return Response::bad_request(e.to_string()),
        };
        match self.remote_sign(body) {
            Ok(block) => Response::ok(
                json!({"signer": block.body.signer_domain, "keys": block.keys_string, "sig": block.signature}).to_string(),
            ),
            Err(e @ SimError::UnregisteredApp(_)) => Response {
                status: 403,
                body: e.to_string(),
            },
            Err(e) => Response::bad_request(e.to_string()),
        }
    }
}

impl Endpoint for AppSigner {
    fn handle(&self, req: &Request) -> Response {
        match req.path() {
            SIGN_PATH => self.handle_sign(req),
            _ => Response::not_found(),
        }
    }
}

/// JSON form of a first-block body sent to an app signer:
/// `{tid, ip, custody, fields: {name: value}}`.
pub fn body_to_json(body: &BlockBody) -> Value {
    let fields: serde_json::Map<String, Value> = body
        .fields
        .iter()
        .map(|f| (f.key().to_string(), Value::String(f.value().to_string())))
        .collect();
    json!({
        "tid": body.origin.map(|o| o.transaction_id.to_string()),
        "ip": body.origin.map(|o| crate::chain::canonical_ip(&o.client_ip)),
        "custody": body.custody,
        "fields": fields,
    })
}

pub fn body_from_json(text: &str, publisher: &str) -> Result<BlockBody, SimError> {
    let v: Value = serde_json::from_str(text).map_err(|e| SimError::Malformed(e.to_string()))?;
    let s = |k: &str| v[k].as_str().ok_or_else(|| SimError::Malformed(format!("missing {k}")));
    let transaction_id = TransactionId::parse(s("tid")?).map_err(|e| SimError::Malformed(e.to_string()))?;
    let client_ip = crate::chain::parse_canonical_ip(s("ip")?)
        .ok_or_else(|| SimError::Malformed("ip is not canonical".into()))?;
    let mut fields = Vec::new();
    if let Some(obj) = v["fields"].as_object() {
        for (k, val) in obj {
            let val = val.as_str().ok_or_else(|| SimError::Malformed(format!("field {k} is not a string")))?;
            fields.push(DataField::new(k, val)?);
        }
    }
    Ok(BlockBody {
        index: 0,
        signer_domain: publisher.to_string(),
        custody: s("custody")?.to_string(),
        prev_signature: None,
        fields,
        origin: Some(Origin {
            transaction_id,
            client_ip,
        }),
    })
}
