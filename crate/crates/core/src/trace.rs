//! JSON-lines trace files: one history entry per line, keys in the order
//! `idx, proc, t, action`, then the action's own fields.

use serde::{Deserialize, Deserializer, Serialize};

use crate::model::{Action, AppMessage, CommandId, Configuration, Entry, History, ProcessId};
use crate::replication::{Command, Reply};
use crate::{Error, Result};

fn present<'de, D, T>(d: D) -> std::result::Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    T::deserialize(d).map(Some)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    idx: usize,
    proc: ProcessId,
    t: u64,
    action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    msg: Option<AppMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "present")]
    config: Option<Option<Configuration>>,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "present")]
    spec: Option<Option<Vec<AppMessage>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<CommandId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    command: Option<Command>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reply: Option<Reply>,
}

impl Record {
    fn from_entry(e: &Entry) -> Record {
        let mut r = Record {
            idx: e.index,
            proc: e.process,
            t: e.time,
            action: e.action.name().to_string(),
            msg: None,
            config: None,
            spec: None,
            id: None,
            command: None,
            reply: None,
        };
        match &e.action {
            Action::Broadcast(m) | Action::Deliver(m) => r.msg = Some(m.clone()),
            Action::ConfChanged { config, speculative } => {
                r.config = Some(Some(config.clone()));
                r.spec = Some(speculative.clone());
            }
            Action::ReconfigReq => {}
            Action::ReconfigResp(c) => r.config = Some(c.clone()),
            Action::Introduction(c) => r.config = Some(Some(c.clone())),
            Action::Invoke { id, command } => {
                r.id = Some(*id);
                r.command = Some(*command);
            }
            Action::Respond { id, reply } => {
                r.id = Some(*id);
                r.reply = Some(*reply);
            }
        }
        r
    }

    fn into_entry(self) -> Result<Entry> {
        let idx = self.idx;
        let missing = |field: &str| Error::Trace(format!("record {idx}: {} needs \"{field}\"", self.action));
        let action = match self.action.as_str() {
            "broadcast" => Action::Broadcast(self.msg.clone().ok_or_else(|| missing("msg"))?),
            "deliver" => Action::Deliver(self.msg.clone().ok_or_else(|| missing("msg"))?),
            "conf_changed" => Action::ConfChanged {
                config: self.config.clone().flatten().ok_or_else(|| missing("config"))?,
                speculative: self.spec.clone().ok_or_else(|| missing("spec"))?,
            },
            "reconfig_req" => Action::ReconfigReq,
            "reconfig_resp" => Action::ReconfigResp(self.config.clone().ok_or_else(|| missing("config"))?),
            "introduction" => Action::Introduction(self.config.clone().flatten().ok_or_else(|| missing("config"))?),
            "invoke" => Action::Invoke {
                id: self.id.ok_or_else(|| missing("id"))?,
                command: self.command.ok_or_else(|| missing("command"))?,
            },
            "respond" => Action::Respond {
                id: self.id.ok_or_else(|| missing("id"))?,
                reply: self.reply.ok_or_else(|| missing("reply"))?,
            },
            other => return Err(Error::Trace(format!("record {idx}: unknown action {other:?}"))),
        };
        Ok(Entry {
            index: self.idx,
            process: self.proc,
            time: self.t,
            action,
        })
    }
}

pub fn entry_to_json(e: &Entry) -> String {
    serde_json::to_string(&Record::from_entry(e)).expect("records serialize")
}

pub fn to_jsonl(h: &History) -> String {
    let mut out = String::new();
    for e in h.entries() {
        out.push_str(&entry_to_json(e));
        out.push('\n');
    }
    out
}

/// Parses a trace; blank lines are ignored.
pub fn from_jsonl(text: &str) -> Result<History> {
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: Record =
            serde_json::from_str(line).map_err(|e| Error::Trace(format!("line {}: {e}", n + 1)))?;
        entries.push(r.into_entry()?);
    }
    History::from_entries(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Epoch;

    fn p(i: u32) -> ProcessId {
        ProcessId(i)
    }

    #[test]
    fn key_order_is_fixed() {
        let mut h = History::new();
        let m = AppMessage { origin: p(1), seq: 0, payload: "a".into() };
        let c = Configuration::new(Epoch(0), [p(1), p(2)], p(1));
        h.push(p(1), 3, Action::Broadcast(m.clone()));
        h.push(p(2), 4, Action::ConfChanged { config: c.clone(), speculative: None });
        h.push(p(1), 4, Action::ConfChanged { config: c, speculative: Some(vec![m]) });
        h.push(p(9), 5, Action::ReconfigResp(None));
        let text = to_jsonl(&h);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            r#"{"idx":1,"proc":1,"t":3,"action":"broadcast","msg":{"origin":1,"seq":0,"payload":"a"}}"#
        );
        assert_eq!(
            lines[1],
            r#"{"idx":2,"proc":2,"t":4,"action":"conf_changed","config":{"epoch":0,"members":[1,2],"leader":1},"spec":null}"#
        );
        assert_eq!(lines[3], r#"{"idx":4,"proc":9,"t":5,"action":"reconfig_resp","config":null}"#);
        assert_eq!(from_jsonl(&text).unwrap(), h);
    }

    #[test]
    fn client_records_round_trip() {
        let mut h = History::new();
        let id = CommandId { origin: p(7), seq: 2 };
        h.push(p(7), 1, Action::Invoke { id, command: Command::Read });
        h.push(p(7), 9, Action::Respond { id, reply: Reply::Value(2) });
        assert_eq!(from_jsonl(&to_jsonl(&h)).unwrap(), h);
    }

    #[test]
    fn schema_violations_are_errors() {
        assert!(from_jsonl(r#"{"idx":1,"proc":1,"t":0,"action":"deliver"}"#).is_err());
        assert!(from_jsonl(r#"{"idx":2,"proc":1,"t":0,"action":"reconfig_req"}"#).is_err());
        assert!(from_jsonl(r#"{"idx":1,"proc":1,"t":0,"action":"reconfig_req","extra":1}"#).is_err());
        assert!(from_jsonl("").unwrap().is_empty());
    }
}
