//! Line-delimited tool catalogs and golden query datasets.
//!
//! One JSON object per line. Blank lines and lines starting with `#` are
//! skipped. Unknown fields are carried along untouched so that records
//! survive a parse/serialize cycle.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Result, ToolshedError};

/// JSON-schema primitive type of a tool argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    String,
    Number,
    Integer,
    Boolean,
    Array,
    Object,
}

impl ValueType {
    pub fn as_str(self) -> &'static str {
        match self {
            ValueType::String => "string",
            ValueType::Number => "number",
            ValueType::Integer => "integer",
            ValueType::Boolean => "boolean",
            ValueType::Array => "array",
            ValueType::Object => "object",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "string" => ValueType::String,
            "number" => ValueType::Number,
            "integer" => ValueType::Integer,
            "boolean" => ValueType::Boolean,
            "array" => ValueType::Array,
            "object" => ValueType::Object,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolParameter {
    pub name: String,
    pub description: String,
    pub value_type: ValueType,
    pub required: bool,
}

/// A callable tool as exposed to a function-calling model.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolDefinition {
    /// Code-level identifier, no whitespace.
    pub name: String,
    pub description: String,
    pub parameters: Vec<ToolParameter>,
    /// Fields the parser did not recognise.
    pub extra: Map<String, Value>,
}

impl ToolDefinition {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        ToolDefinition {
            name: name.into(),
            description: description.into(),
            parameters: Vec::new(),
            extra: Map::new(),
        }
    }

    pub fn with_parameter(
        mut self,
        name: impl Into<String>,
        description: impl Into<String>,
        value_type: ValueType,
        required: bool,
    ) -> Self {
        self.parameters.push(ToolParameter {
            name: name.into(),
            description: description.into(),
            value_type,
            required,
        });
        self
    }

    /// The canonical catalog record for this tool.
    pub fn to_record(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("name".into(), Value::String(self.name.clone()));
        obj.insert("description".into(), Value::String(self.description.clone()));
        let params = self
            .parameters
            .iter()
            .map(|p| {
                serde_json::json!({
                    "name": p.name,
                    "description": p.description,
                    "type": p.value_type.as_str(),
                    "required": p.required,
                })
            })
            .collect();
        obj.insert("parameters".into(), Value::Array(params));
        for (k, v) in &self.extra {
            obj.entry(k.clone()).or_insert_with(|| v.clone());
        }
        Value::Object(obj)
    }

    /// The function-definition shape a chat-completions API expects in its
    /// `tools` array.
    pub fn to_function_definition(&self) -> Value {
        let mut properties = Map::new();
        for p in &self.parameters {
            properties.insert(
                p.name.clone(),
                serde_json::json!({ "type": p.value_type.as_str(), "description": p.description }),
            );
        }
        let required: Vec<&str> =
            self.parameters.iter().filter(|p| p.required).map(|p| p.name.as_str()).collect();
        serde_json::json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {
                    "type": "object",
                    "properties": properties,
                    "required": required,
                    "additionalProperties": false,
                }
            }
        })
    }
}

/// One function invocation: a tool name plus its argument map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool_name: String,
    #[serde(default)]
    pub arguments: Map<String, Value>,
}

impl ToolCall {
    pub fn new(tool_name: impl Into<String>) -> Self {
        ToolCall { tool_name: tool_name.into(), arguments: Map::new() }
    }

    pub fn arg(mut self, key: impl Into<String>, value: Value) -> Self {
        self.arguments.insert(key.into(), value);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceType {
    Single,
    Parallel,
    Sequential,
}

impl TraceType {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceType::Single => "single",
            TraceType::Parallel => "parallel",
            TraceType::Sequential => "sequential",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "single" => Some(TraceType::Single),
            "parallel" => Some(TraceType::Parallel),
            "sequential" => Some(TraceType::Sequential),
            _ => None,
        }
    }
}

/// A benchmark query paired with the calls that answer it.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldenRecord {
    pub query_id: String,
    pub query_text: String,
    pub trace_type: TraceType,
    pub expected_calls: Vec<ToolCall>,
    pub extra: Map<String, Value>,
}

impl GoldenRecord {
    /// Distinct tool names the query needs, in first-call order.
    pub fn golden_tools(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.expected_calls
            .iter()
            .filter(|c| seen.insert(c.tool_name.as_str()))
            .map(|c| c.tool_name.clone())
            .collect()
    }

    pub fn to_record(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("query_id".into(), Value::String(self.query_id.clone()));
        obj.insert("query".into(), Value::String(self.query_text.clone()));
        obj.insert("trace_type".into(), Value::String(self.trace_type.as_str().into()));
        obj.insert(
            "expected_calls".into(),
            serde_json::to_value(&self.expected_calls).expect("tool calls serialize"),
        );
        for (k, v) in &self.extra {
            obj.entry(k.clone()).or_insert_with(|| v.clone());
        }
        Value::Object(obj)
    }
}

/// Calls an agent actually produced for a query, for weighted-accuracy scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub query_id: String,
    pub predicted_calls: Vec<ToolCall>,
}

fn records(raw: &[u8]) -> Result<impl Iterator<Item = (usize, &str)>> {
    let text = std::str::from_utf8(raw).map_err(|e| {
        let line = raw[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        ToolshedError::Parse { line, message: format!("invalid UTF-8: {e}") }
    })?;
    Ok(text.lines().enumerate().filter_map(|(i, l)| {
        let t = l.trim();
        (!t.is_empty() && !t.starts_with('#')).then_some((i + 1, t))
    }))
}

fn parse_object(line: usize, text: &str) -> Result<Map<String, Value>> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(ToolshedError::schema(Some(line), "record is not a JSON object")),
        Err(e) => Err(ToolshedError::Parse { line, message: e.to_string() }),
    }
}

fn take_string(obj: &mut Map<String, Value>, key: &str, line: usize) -> Result<String> {
    match obj.remove(key) {
        Some(Value::String(s)) => Ok(s),
        Some(other) => Err(ToolshedError::schema(
            Some(line),
            format!("field `{key}` must be a string, found {other}"),
        )),
        None => Err(ToolshedError::schema(Some(line), format!("missing field `{key}`"))),
    }
}

/// Parse a tool catalog.
///
/// Besides the canonical `{"name","description","parameters":[...]}` record,
/// the JSON-schema form (`"parameters": {"type":"object","properties":{...},
/// "required":[...]}`) and the `{"type":"function","function":{...}}` wrapper
/// are accepted.
pub fn parse_tool_catalog(raw: &[u8]) -> Result<Vec<ToolDefinition>> {
    records(raw)?.map(|(line, text)| parse_tool_record(line, text)).collect()
}

fn parse_tool_record(line: usize, text: &str) -> Result<ToolDefinition> {
    let mut obj = parse_object(line, text)?;
    if obj.get("type").and_then(Value::as_str) == Some("function") {
        if let Some(Value::Object(inner)) = obj.remove("function") {
            obj = inner;
        }
    }
    let name = take_string(&mut obj, "name", line)?;
    if name.is_empty() {
        return Err(ToolshedError::schema(Some(line), "tool name is empty"));
    }
    let description = take_string(&mut obj, "description", line)?;
    let parameters = match obj.remove("parameters") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .into_iter()
            .map(|item| parse_parameter_entry(line, &name, item))
            .collect::<Result<_>>()?,
        Some(Value::Object(schema)) => parse_parameter_schema(line, &name, schema)?,
        Some(other) => {
            return Err(ToolshedError::schema(
                Some(line),
                format!("tool `{name}`: `parameters` must be a list or an object schema, found {other}"),
            ))
        }
    };
    Ok(ToolDefinition { name, description, parameters, extra: obj })
}

fn parse_value_type(line: usize, tool: &str, param: &str, v: Option<Value>) -> Result<ValueType> {
    match v {
        Some(Value::String(s)) => ValueType::parse(&s).ok_or_else(|| {
            ToolshedError::schema(
                Some(line),
                format!("tool `{tool}`, parameter `{param}`: unknown value type `{s}`"),
            )
        }),
        Some(other) => Err(ToolshedError::schema(
            Some(line),
            format!("tool `{tool}`, parameter `{param}`: type must be a string, found {other}"),
        )),
        None => Err(ToolshedError::schema(
            Some(line),
            format!("tool `{tool}`, parameter `{param}`: missing `type`"),
        )),
    }
}

fn optional_description(line: usize, tool: &str, param: &str, v: Option<Value>) -> Result<String> {
    match v {
        None | Some(Value::Null) => Ok(String::new()),
        Some(Value::String(s)) => Ok(s),
        Some(other) => Err(ToolshedError::schema(
            Some(line),
            format!("tool `{tool}`, parameter `{param}`: description must be a string, found {other}"),
        )),
    }
}

fn parse_parameter_entry(line: usize, tool: &str, item: Value) -> Result<ToolParameter> {
    let Value::Object(mut p) = item else {
        return Err(ToolshedError::schema(
            Some(line),
            format!("tool `{tool}`: parameter entries must be objects"),
        ));
    };
    let name = take_string(&mut p, "name", line)?;
    let value_type = parse_value_type(line, tool, &name, p.remove("type"))?;
    let description = optional_description(line, tool, &name, p.remove("description"))?;
    let required = match p.remove("required") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => b,
        Some(other) => {
            return Err(ToolshedError::schema(
                Some(line),
                format!("tool `{tool}`, parameter `{name}`: `required` must be a boolean, found {other}"),
            ))
        }
    };
    Ok(ToolParameter { name, description, value_type, required })
}

fn parse_parameter_schema(
    line: usize,
    tool: &str,
    mut schema: Map<String, Value>,
) -> Result<Vec<ToolParameter>> {
    let required: HashSet<String> = match schema.remove("required") {
        Some(Value::Array(names)) => {
            names.into_iter().filter_map(|v| v.as_str().map(str::to_owned)).collect()
        }
        _ => HashSet::new(),
    };
    let properties = match schema.remove("properties") {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(m)) => m,
        Some(other) => {
            return Err(ToolshedError::schema(
                Some(line),
                format!("tool `{tool}`: `properties` must be an object, found {other}"),
            ))
        }
    };
    properties
        .into_iter()
        .map(|(name, spec)| {
            let Value::Object(mut spec) = spec else {
                return Err(ToolshedError::schema(
                    Some(line),
                    format!("tool `{tool}`, parameter `{name}`: property must be an object"),
                ));
            };
            let value_type = parse_value_type(line, tool, &name, spec.remove("type"))?;
            let description = optional_description(line, tool, &name, spec.remove("description"))?;
            let required = required.contains(&name);
            Ok(ToolParameter { name, description, value_type, required })
        })
        .collect()
}

pub fn serialize_tool_catalog(tools: &[ToolDefinition]) -> String {
    tools.iter().map(|t| format!("{}\n", t.to_record())).collect()
}

pub fn serialize_golden_dataset(records: &[GoldenRecord]) -> String {
    records.iter().map(|r| format!("{}\n", r.to_record())).collect()
}

/// Parse golden query → expected-call records.
pub fn parse_golden_dataset(raw: &[u8]) -> Result<Vec<GoldenRecord>> {
    records(raw)?.map(|(line, text)| parse_golden_record(line, text)).collect()
}

fn parse_golden_record(line: usize, text: &str) -> Result<GoldenRecord> {
    let mut obj = parse_object(line, text)?;
    let query_id = take_string(&mut obj, "query_id", line)?;
    let query_text = take_string(&mut obj, "query", line)?;
    let trace_raw = take_string(&mut obj, "trace_type", line)?;
    let trace_type = TraceType::parse(&trace_raw).ok_or_else(|| {
        ToolshedError::schema(Some(line), format!("unknown trace_type `{trace_raw}`"))
    })?;
    let expected_calls = parse_calls(line, obj.remove("expected_calls"), "expected_calls")?;
    if expected_calls.is_empty() {
        return Err(ToolshedError::schema(
            Some(line),
            format!("query `{query_id}`: expected_calls is empty"),
        ));
    }
    let single = expected_calls.len() == 1;
    if single != (trace_type == TraceType::Single) {
        return Err(ToolshedError::schema(
            Some(line),
            format!(
                "query `{query_id}`: trace_type `{}` is inconsistent with {} expected call(s)",
                trace_type.as_str(),
                expected_calls.len()
            ),
        ));
    }
    Ok(GoldenRecord { query_id, query_text, trace_type, expected_calls, extra: obj })
}

fn parse_calls(line: usize, v: Option<Value>, field: &str) -> Result<Vec<ToolCall>> {
    let items = match v {
        Some(Value::Array(items)) => items,
        None => return Err(ToolshedError::schema(Some(line), format!("missing field `{field}`"))),
        Some(other) => {
            return Err(ToolshedError::schema(
                Some(line),
                format!("`{field}` must be a list, found {other}"),
            ))
        }
    };
    items.into_iter().map(|item| parse_call(line, item)).collect()
}

fn parse_call(line: usize, item: Value) -> Result<ToolCall> {
    let Value::Object(mut obj) = item else {
        return Err(ToolshedError::schema(Some(line), "tool calls must be objects"));
    };
    let tool_name = take_string(&mut obj, "tool_name", line)?;
    if tool_name.is_empty() {
        return Err(ToolshedError::schema(Some(line), "tool call has an empty tool_name"));
    }
    let arguments = match obj.remove("arguments") {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(m)) => m,
        // chat-completions APIs return arguments as a JSON-encoded string
        Some(Value::String(s)) => match serde_json::from_str::<Value>(&s) {
            Ok(Value::Object(m)) => m,
            _ => {
                return Err(ToolshedError::schema(
                    Some(line),
                    format!("call `{tool_name}`: arguments string is not a JSON object"),
                ))
            }
        },
        Some(other) => {
            return Err(ToolshedError::schema(
                Some(line),
                format!("call `{tool_name}`: arguments must be an object, found {other}"),
            ))
        }
    };
    Ok(ToolCall { tool_name, arguments })
}

/// Parse `{"query_id", "predicted_calls":[...]}` records.
pub fn parse_predictions(raw: &[u8]) -> Result<Vec<PredictionRecord>> {
    records(raw)?
        .map(|(line, text)| {
            let mut obj = parse_object(line, text)?;
            let query_id = take_string(&mut obj, "query_id", line)?;
            let predicted_calls = parse_calls(line, obj.remove("predicted_calls"), "predicted_calls")?;
            Ok(PredictionRecord { query_id, predicted_calls })
        })
        .collect()
}

/// A catalog problem reported by [`validate_catalog`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Finding {
    DuplicateName { name: String, occurrences: usize },
    EmptyName { position: usize },
    NameContainsWhitespace { name: String },
    EmptyDescription { name: String },
    EmptyParameterName { tool: String },
    ParameterCollision { tool: String, parameter: String },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::DuplicateName { name, occurrences } => write!(
                f,
                "duplicate tool name `{name}` ({occurrences} occurrences); tool names must be unique"
            ),
            Finding::EmptyName { position } => write!(f, "tool #{position} has an empty name"),
            Finding::NameContainsWhitespace { name } => {
                write!(f, "tool name `{name}` contains whitespace; function names cannot")
            }
            Finding::EmptyDescription { name } => write!(
                f,
                "tool `{name}` has an empty description; describe what it does and when it \
                 should and should not be used"
            ),
            Finding::EmptyParameterName { tool } => {
                write!(f, "tool `{tool}` has a parameter with an empty name")
            }
            Finding::ParameterCollision { tool, parameter } => {
                write!(f, "tool `{tool}` declares parameter `{parameter}` more than once")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn duplicate_names(&self) -> impl Iterator<Item = &str> {
        self.findings.iter().filter_map(|f| match f {
            Finding::DuplicateName { name, .. } => Some(name.as_str()),
            _ => None,
        })
    }
}

/// Check every catalog invariant; an empty report means the catalog is usable
/// as-is.
pub fn validate_catalog(catalog: &[ToolDefinition]) -> ValidationReport {
    let mut findings = Vec::new();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut first_seen: Vec<&str> = Vec::new();
    for (position, tool) in catalog.iter().enumerate() {
        if tool.name.is_empty() {
            findings.push(Finding::EmptyName { position });
        } else if tool.name.chars().any(char::is_whitespace) {
            findings.push(Finding::NameContainsWhitespace { name: tool.name.clone() });
        }
        if !tool.name.is_empty() {
            let c = counts.entry(&tool.name).or_insert(0);
            if *c == 0 {
                first_seen.push(&tool.name);
            }
            *c += 1;
        }
        if tool.description.trim().is_empty() {
            findings.push(Finding::EmptyDescription { name: tool.name.clone() });
        }
        let mut params = HashSet::new();
        let mut reported = HashSet::new();
        for p in &tool.parameters {
            if p.name.is_empty() {
                findings.push(Finding::EmptyParameterName { tool: tool.name.clone() });
            } else if !params.insert(p.name.as_str()) && reported.insert(p.name.as_str()) {
                findings.push(Finding::ParameterCollision {
                    tool: tool.name.clone(),
                    parameter: p.name.clone(),
                });
            }
        }
    }
    for name in first_seen {
        let occurrences = counts[name];
        if occurrences > 1 {
            findings.push(Finding::DuplicateName { name: name.to_owned(), occurrences });
        }
    }
    ValidationReport { findings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DELIVERY: &str = r#"{"name":"get_delivery_date","description":"Get the delivery date for a customer's order.","parameters":[{"name":"order_id","description":"The customer's order ID.","type":"string","required":true}]}"#;

    #[test]
    fn parses_delivery_date_tool() {
        let tools = parse_tool_catalog(DELIVERY.as_bytes()).unwrap();
        assert_eq!(tools.len(), 1);
        let t = &tools[0];
        assert_eq!(t.name, "get_delivery_date");
        assert_eq!(t.parameters.len(), 1);
        let p = &t.parameters[0];
        assert_eq!(p.name, "order_id");
        assert_eq!(p.value_type, ValueType::String);
        assert!(p.required);
        assert_eq!(p.description, "The customer's order ID.");
    }

    #[test]
    fn parses_json_schema_parameters_and_function_wrapper() {
        let line = r#"{"type":"function","function":{"name":"get_delivery_date","description":"d","parameters":{"type":"object","properties":{"order_id":{"type":"string","description":"The customer's order ID."},"note":{"type":"string"}},"required":["order_id"],"additionalProperties":false}}}"#;
        let tools = parse_tool_catalog(line.as_bytes()).unwrap();
        let params = &tools[0].parameters;
        assert_eq!(params[0].name, "order_id");
        assert!(params[0].required);
        assert_eq!(params[1].name, "note");
        assert!(!params[1].required);
    }

    #[test]
    fn empty_and_comment_only_input_yields_nothing() {
        assert!(parse_tool_catalog(b"").unwrap().is_empty());
        assert!(parse_tool_catalog(b"\n# comment\n   \n").unwrap().is_empty());
    }

    #[test]
    fn missing_name_is_schema_error_with_line() {
        let raw = format!("{DELIVERY}\n\n{{\"description\":\"x\"}}\n");
        match parse_tool_catalog(raw.as_bytes()) {
            Err(ToolshedError::Schema { line: Some(3), message }) => {
                assert!(message.contains("name"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_is_parse_error() {
        let raw = format!("{DELIVERY}\n{{\"name\": \n");
        assert!(matches!(
            parse_tool_catalog(raw.as_bytes()),
            Err(ToolshedError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn unknown_value_type_and_missing_description_rejected() {
        let bad_type = r#"{"name":"a","description":"d","parameters":[{"name":"x","type":"date"}]}"#;
        assert!(matches!(
            parse_tool_catalog(bad_type.as_bytes()),
            Err(ToolshedError::Schema { line: Some(1), .. })
        ));
        let no_desc = r#"{"name":"a"}"#;
        assert!(matches!(parse_tool_catalog(no_desc.as_bytes()), Err(ToolshedError::Schema { .. })));
    }

    #[test]
    fn extra_fields_are_preserved() {
        let line = r#"{"name":"a","description":"d","category":"finance"}"#;
        let tools = parse_tool_catalog(line.as_bytes()).unwrap();
        assert_eq!(tools[0].extra["category"], "finance");
        let again = parse_tool_catalog(serialize_tool_catalog(&tools).as_bytes()).unwrap();
        assert_eq!(again, tools);
    }

    #[test]
    fn golden_trace_types() {
        let single = r#"{"query_id":"q1","query":"when does order 12345 arrive?","trace_type":"single","expected_calls":[{"tool_name":"get_delivery_date","arguments":{"order_id":"order_12345"}}]}"#;
        let recs = parse_golden_dataset(single.as_bytes()).unwrap();
        assert_eq!(recs[0].trace_type, TraceType::Single);
        assert_eq!(recs[0].expected_calls[0].arguments["order_id"], "order_12345");

        let parallel = r#"{"query_id":"q2","query":"npv and irr","trace_type":"parallel","expected_calls":[{"tool_name":"npv","arguments":{}},{"tool_name":"irr"}]}"#;
        assert_eq!(parse_golden_dataset(parallel.as_bytes()).unwrap()[0].expected_calls.len(), 2);

        let mislabeled = parallel.replace("\"parallel\"", "\"single\"");
        assert!(matches!(
            parse_golden_dataset(mislabeled.as_bytes()),
            Err(ToolshedError::Schema { line: Some(1), .. })
        ));

        let empty = r#"{"query_id":"q3","query":"x","trace_type":"single","expected_calls":[]}"#;
        assert!(matches!(parse_golden_dataset(empty.as_bytes()), Err(ToolshedError::Schema { .. })));
    }

    #[test]
    fn golden_arguments_keep_insertion_order_and_accept_encoded_strings() {
        let line = r#"{"query_id":"q","query":"x","trace_type":"single","expected_calls":[{"tool_name":"t","arguments":"{\"z\":1,\"a\":2,\"m\":3}"}]}"#;
        let rec = &parse_golden_dataset(line.as_bytes()).unwrap()[0];
        let keys: Vec<&str> = rec.expected_calls[0].arguments.keys().map(String::as_str).collect();
        assert_eq!(keys, ["z", "a", "m"]);
    }

    #[test]
    fn validation_findings() {
        let dup = vec![ToolDefinition::new("get_record", "a"), ToolDefinition::new("get_record", "b")];
        let report = validate_catalog(&dup);
        assert_eq!(report.findings.len(), 1);
        assert_eq!(report.duplicate_names().collect::<Vec<_>>(), ["get_record"]);

        let clean = vec![
            ToolDefinition::new("a", "does a").with_parameter("x", "", ValueType::Integer, true),
            ToolDefinition::new("b", "does b"),
        ];
        assert!(validate_catalog(&clean).is_clean());

        let empty_desc = vec![ToolDefinition::new("a", "  ")];
        let report = validate_catalog(&empty_desc);
        assert_eq!(report.findings, vec![Finding::EmptyDescription { name: "a".into() }]);
        assert!(report.findings[0].to_string().contains("when it should"));

        let collide = vec![ToolDefinition::new("a b", "d")
            .with_parameter("x", "", ValueType::String, false)
            .with_parameter("x", "", ValueType::String, false)];
        let report = validate_catalog(&collide);
        assert_eq!(report.findings.len(), 2);
    }

    fn arb_tool() -> impl Strategy<Value = ToolDefinition> {
        let param = ("[a-z_]{1,8}", ".{0,20}", 0usize..6, any::<bool>()).prop_map(|(n, d, t, r)| {
            let types = [
                ValueType::String,
                ValueType::Number,
                ValueType::Integer,
                ValueType::Boolean,
                ValueType::Array,
                ValueType::Object,
            ];
            ToolParameter { name: n, description: d, value_type: types[t], required: r }
        });
        ("[A-Za-z_][A-Za-z0-9_]{0,12}", ".{0,40}", prop::collection::vec(param, 0..4)).prop_map(
            |(name, description, parameters)| ToolDefinition {
                name,
                description,
                parameters,
                extra: Map::new(),
            },
        )
    }

    fn arb_golden() -> impl Strategy<Value = GoldenRecord> {
        let call = ("[a-z_]{1,10}", prop::collection::vec(("[a-z]{1,5}", ".{0,8}"), 0..3)).prop_map(
            |(name, args)| {
                let mut c = ToolCall::new(name);
                for (k, v) in args {
                    c.arguments.insert(k, Value::String(v));
                }
                c
            },
        );
        ("[a-z0-9]{1,6}", ".{1,30}", prop::collection::vec(call, 1..4), any::<bool>()).prop_map(
            |(id, q, calls, seq)| GoldenRecord {
                query_id: id,
                query_text: q,
                trace_type: match (calls.len(), seq) {
                    (1, _) => TraceType::Single,
                    (_, true) => TraceType::Sequential,
                    _ => TraceType::Parallel,
                },
                expected_calls: calls,
                extra: Map::new(),
            },
        )
    }

    proptest! {
        #[test]
        fn catalog_round_trips_in_order(tools in prop::collection::vec(arb_tool(), 0..6)) {
            let text = serialize_tool_catalog(&tools);
            prop_assert_eq!(parse_tool_catalog(text.as_bytes()).unwrap(), tools);
        }

        #[test]
        fn golden_round_trips(recs in prop::collection::vec(arb_golden(), 0..5)) {
            let text = serialize_golden_dataset(&recs);
            prop_assert_eq!(parse_golden_dataset(text.as_bytes()).unwrap(), recs);
        }

        #[test]
        fn clean_report_implies_distinct_names(names in prop::collection::vec("[a-c]{1,2}", 0..8)) {
            let catalog: Vec<_> = names.iter().map(|n| ToolDefinition::new(n.clone(), "d")).collect();
            if validate_catalog(&catalog).is_clean() {
                let distinct: HashSet<_> = names.iter().collect();
                prop_assert_eq!(distinct.len(), names.len());
            }
        }
    }
}
