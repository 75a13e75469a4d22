//! Synthetic benchmark suite: six libraries of eight tools, three intents and
//! a scripted corpus whose tasks take two to four steps when ungated.
//!
//! Scripts batch all of a task's calls into one step once the offered schema
//! is narrow, which is how the planner reacts to a gated toolset. Every fifth
//! task can be deliberately misclassified onto an intent that lacks its tools.

use std::collections::BTreeSet;
use std::io;
use std::path::Path;

use serde_json::{json, Value};

use crate::agent::TaskSpec;
use crate::backend::{NarrowVariant, ScriptEntry, ScriptReply, ScriptStep, ScriptedCall};
use crate::intent::{DefaultPolicy, IntentMap, IntentRecord, ALL_LIBRARIES};
use crate::registry::{RegistryBuilder, ToolRegistry, ToolSpec};

pub const DEFAULT_TASKS: usize = 60;

/// Offered schemas at or below this size count as narrow.
pub const NARROW_MAX_OFFERED: usize = 30;

pub const LOAD_FILTER_PLOT: &str = "Load→Filter→Plot";
pub const WEB_NAVIGATION: &str = "UI/Web Navigation";
pub const INFORMATION_SEEKING: &str = "Information Seeking";

struct Param(&'static str, &'static str, &'static str);

fn tool(name: &str, description: &str, params: &[Param]) -> ToolSpec {
    let properties: serde_json::Map<String, Value> = params
        .iter()
        .map(|Param(n, ty, d)| (n.to_string(), json!({"type": ty, "description": d})))
        .collect();
    let required: Vec<&str> = params.iter().map(|p| p.0).collect();
    ToolSpec::new(
        name,
        description,
        json!({"type": "object", "properties": properties, "required": required}),
    )
}

fn sql_apis() -> Vec<ToolSpec> {
    vec![
        tool("sql_query", "Run a read-only SQL query against the imagery metadata catalog and return matching rows with image ids, footprints, acquisition dates and sensor names.", &[Param("dataset", "string", "Catalog dataset to query, e.g. xview1 or sentinel2."), Param("where", "string", "SQL WHERE clause applied to the dataset.")]),
        tool("sql_list_tables", "List the tables available in the imagery metadata catalog together with a one-line summary of each table's contents.", &[Param("schema", "string", "Catalog schema to inspect.")]),
        tool("sql_describe_table", "Describe the columns of a catalog table, including column types, units and whether the column is indexed for fast filtering.", &[Param("table", "string", "Table name to describe.")]),
        tool("sql_count_rows", "Count the rows of a catalog table that satisfy an optional SQL predicate, without materializing the rows themselves.", &[Param("table", "string", "Table to count."), Param("where", "string", "Optional SQL predicate.")]),
        tool("sql_join_tables", "Join two catalog tables on a shared key column and keep the joined result as a temporary table for later queries.", &[Param("left", "string", "Left table."), Param("right", "string", "Right table."), Param("key", "string", "Join key column.")]),
        tool("sql_group_by", "Group catalog rows by one column and compute an aggregate (count, min, max or mean) over another column for each group.", &[Param("table", "string", "Table to aggregate."), Param("column", "string", "Grouping column."), Param("aggregate", "string", "Aggregate expression.")]),
        tool("sql_order_by", "Sort the current query result by a column in ascending or descending order and optionally keep only the first rows.", &[Param("column", "string", "Sort column."), Param("limit", "integer", "Maximum rows to keep.")]),
        tool("sql_export_csv", "Export the current query result to a CSV file in the user's workspace and return the file path.", &[Param("filename", "string", "Target file name.")]),
    ]
}

fn data_apis() -> Vec<ToolSpec> {
    vec![
        tool("filter_area", "Keep only the loaded images whose footprint intersects a named region or a bounding box given in WGS84 coordinates.", &[Param("region", "string", "Place name or bounding box.")]),
        tool("filter_date_range", "Keep only the loaded images acquired between two dates, inclusive, using the acquisition timestamp in UTC.", &[Param("start", "string", "Start date, YYYY-MM-DD."), Param("end", "string", "End date, YYYY-MM-DD.")]),
        tool("filter_cloud_cover", "Keep only the loaded images whose estimated cloud cover percentage is below the given threshold.", &[Param("max_percent", "number", "Maximum cloud cover in percent.")]),
        tool("filter_sensor", "Keep only the loaded images captured by the given sensor or satellite platform.", &[Param("sensor", "string", "Sensor or platform name.")]),
        tool("sample_records", "Draw a uniform random sample of the loaded images with a fixed seed so the selection is reproducible.", &[Param("count", "integer", "Number of images to keep."), Param("seed", "integer", "Random seed.")]),
        tool("deduplicate_records", "Remove duplicate images that share the same footprint and acquisition date, keeping the highest resolution copy.", &[Param("tolerance_m", "number", "Footprint match tolerance in meters.")]),
        tool("compute_statistics", "Compute summary statistics over the loaded images: counts per sensor, date coverage and total covered area.", &[Param("group_by", "string", "Optional grouping column.")]),
        tool("merge_datasets", "Merge the currently loaded images with another dataset already loaded in the session.", &[Param("other", "string", "Name of the other loaded dataset.")]),
    ]
}

fn map_apis() -> Vec<ToolSpec> {
    vec![
        tool("plot_images", "Plot the footprints of the loaded images on the interactive map, colored by acquisition date.", &[Param("style", "string", "Footprint style: outline or filled.")]),
        tool("plot_heatmap", "Render a density heatmap of the loaded image footprints on the interactive map.", &[Param("radius_px", "integer", "Kernel radius in pixels.")]),
        tool("plot_bounding_boxes", "Draw detection bounding boxes for the loaded images on the map, labelled with class names and confidence.", &[Param("min_confidence", "number", "Minimum detection confidence.")]),
        tool("set_map_center", "Center the interactive map on a place name or on explicit latitude and longitude.", &[Param("location", "string", "Place name or lat,lon.")]),
        tool("set_zoom_level", "Set the zoom level of the interactive map, from 1 (world) to 20 (building).", &[Param("level", "integer", "Zoom level.")]),
        tool("add_map_layer", "Add a basemap or overlay layer such as satellite, terrain, roads or administrative boundaries.", &[Param("layer", "string", "Layer name.")]),
        tool("clear_map", "Remove every plotted footprint, heatmap and bounding box from the interactive map.", &[Param("keep_layers", "boolean", "Keep basemap layers.")]),
        tool("export_map_png", "Export the current map view to a PNG file in the user's workspace and return the file path.", &[Param("filename", "string", "Target file name.")]),
    ]
}

fn web_apis() -> Vec<ToolSpec> {
    vec![
        tool("web_search", "Search the web with Bing and return the top results with titles, URLs and snippets.", &[Param("query", "string", "Search query.")]),
        tool("open_url", "Open a URL in the embedded browser and return the page title once it has loaded.", &[Param("url", "string", "Absolute URL or result rank from the last search.")]),
        tool("extract_page_text", "Extract the readable main text of the page open in the embedded browser, without navigation and ads.", &[Param("max_chars", "integer", "Maximum characters to return.")]),
        tool("follow_link", "Follow the link on the current page whose anchor text best matches the given text.", &[Param("text", "string", "Anchor text to match.")]),
        tool("download_file", "Download a file linked from the current page into the user's workspace and return the file path.", &[Param("url", "string", "File URL.")]),
        tool("search_news", "Search recent news articles with Bing News and return headlines, sources and publication dates.", &[Param("query", "string", "News query.")]),
        tool("translate_page", "Translate the page open in the embedded browser into the given language.", &[Param("language", "string", "Target language code.")]),
        tool("summarize_page", "Summarize the page open in the embedded browser in a few sentences.", &[Param("sentences", "integer", "Number of sentences.")]),
    ]
}

fn ui_apis() -> Vec<ToolSpec> {
    vec![
        tool("click_element", "Click a user-interface element of the application identified by its visible label.", &[Param("label", "string", "Visible element label.")]),
        tool("type_text", "Type text into the focused input field of the application.", &[Param("text", "string", "Text to type.")]),
        tool("scroll_page", "Scroll the active application panel up or down by a number of screens.", &[Param("screens", "integer", "Screens to scroll; negative scrolls up.")]),
        tool("select_tab", "Switch the application to the tab with the given title.", &[Param("title", "string", "Tab title.")]),
        tool("open_panel", "Open a side panel of the application such as layers, history or settings.", &[Param("panel", "string", "Panel name.")]),
        tool("close_panel", "Close a side panel of the application.", &[Param("panel", "string", "Panel name.")]),
        tool("take_screenshot", "Capture a screenshot of the application window and save it to the user's workspace.", &[Param("filename", "string", "Target file name.")]),
        tool("read_ui_text", "Read the visible text of a user-interface region identified by its label.", &[Param("label", "string", "Region label.")]),
    ]
}

fn wiki_apis() -> Vec<ToolSpec> {
    vec![
        tool("wiki_search", "Search the internal knowledge base of remote-sensing models, datasets and methods and return matching article titles.", &[Param("query", "string", "Search query.")]),
        tool("wiki_get_article", "Fetch a knowledge-base article by title and return its full text.", &[Param("title", "string", "Article title.")]),
        tool("wiki_get_section", "Fetch one section of a knowledge-base article by title and section heading.", &[Param("title", "string", "Article title."), Param("section", "string", "Section heading.")]),
        tool("wiki_list_models", "List the models documented in the knowledge base for a task such as detection, segmentation or captioning.", &[Param("task", "string", "Task name.")]),
        tool("wiki_model_card", "Return the model card of a documented model: architecture, training data, metrics and intended use.", &[Param("model", "string", "Model name.")]),
        tool("wiki_compare_models", "Compare two documented models on their reported metrics and resource requirements.", &[Param("a", "string", "First model."), Param("b", "string", "Second model.")]),
        tool("wiki_glossary", "Look up the definition of a remote-sensing term in the knowledge-base glossary.", &[Param("term", "string", "Term to define.")]),
        tool("wiki_cite", "Return a citation for a knowledge-base article in the requested style.", &[Param("title", "string", "Article title."), Param("style", "string", "Citation style.")]),
    ]
}

pub fn registry() -> ToolRegistry {
    let mut b = RegistryBuilder::new();
    let libs: [(&str, &str, Vec<ToolSpec>); 6] = [
        ("SQL_apis", "Query the imagery metadata catalog.", sql_apis()),
        ("data_apis", "Filter and transform loaded imagery records.", data_apis()),
        ("map_apis", "Visualize imagery on the interactive map.", map_apis()),
        ("web_apis", "Search and browse the web.", web_apis()),
        ("UI_apis", "Drive the application user interface.", ui_apis()),
        ("wiki_apis", "Consult the remote-sensing knowledge base.", wiki_apis()),
    ];
    for (name, description, tools) in libs {
        b.register_library(name, description, tools)
            .expect("synthetic registry is valid");
    }
    b.seal()
}

fn intent(id: &str, examples: &[&str], libraries: &[&str]) -> IntentRecord {
    IntentRecord {
        id: id.to_string(),
        description: id.to_string(),
        example_queries: examples.iter().map(|s| s.to_string()).collect(),
        libraries: libraries.iter().map(|s| s.to_string()).collect(),
    }
}

/// The three intents of the query taxonomy.
pub fn intent_map() -> IntentMap {
    IntentMap {
        default_policy: DefaultPolicy::FullToolset,
        intents: vec![
            intent(
                LOAD_FILTER_PLOT,
                &["Plot xview1 images around Tampa Bay, FL, USA"],
                &["SQL_apis", "data_apis", "map_apis"],
            ),
            intent(
                WEB_NAVIGATION,
                &["Search Bing for \"System-efficient LLM prompting\"?"],
                &["web_apis", "UI_apis"],
            ),
            intent(
                INFORMATION_SEEKING,
                &["Which model to use for airplane detection?"],
                &["wiki_apis"],
            ),
        ],
    }
}

/// Same intents, each mapped to every library.
pub fn identity_intent_map() -> IntentMap {
    let mut map = intent_map();
    for record in &mut map.intents {
        record.libraries = BTreeSet::from([ALL_LIBRARIES.to_string()]);
    }
    map
}

const PLACES: [&str; 10] = [
    "Tampa Bay, FL, USA",
    "San Diego, CA, USA",
    "Rotterdam, Netherlands",
    "Lagos, Nigeria",
    "Osaka, Japan",
    "Valparaíso, Chile",
    "Marseille, France",
    "Mumbai, India",
    "Seattle, WA, USA",
    "Cape Town, South Africa",
];

const TOPICS: [&str; 10] = [
    "System-efficient LLM prompting",
    "tool-augmented copilots",
    "onboard satellite compression",
    "wildfire smoke forecasting",
    "flood extent mapping",
    "ship wake detection",
    "urban heat islands",
    "crop type classification",
    "glacier retreat monitoring",
    "sea ice concentration",
];

const OBJECTS: [&str; 10] = [
    "airplane", "ship", "storage tank", "bridge", "harbor", "vehicle", "wind turbine", "solar farm",
    "helipad", "roundabout",
];

const MODELS: [&str; 10] = [
    "YOLOv8", "Faster R-CNN", "RetinaNet", "DETR", "SAM", "Mask R-CNN", "ViTDet", "FCOS", "CenterNet",
    "Cascade R-CNN",
];

/// A generated task with its ordered call plan.
#[derive(Debug, Clone)]
struct Plan {
    task: TaskSpec,
    calls: Vec<ScriptedCall>,
    answer: String,
}

fn call(name: &str, arguments: Value) -> ScriptedCall {
    ScriptedCall {
        name: name.to_string(),
        arguments,
    }
}

fn plan(i: usize) -> Plan {
    let v = (i / 3) % 10;
    let (intent, prompt, mut calls, answer, expected) = match i % 3 {
        0 => {
            let place = PLACES[v];
            let calls = vec![
                call("sql_query", json!({"dataset": "xview1", "where": format!("region = '{place}'")})),
                call("filter_area", json!({"region": place})),
                call("plot_images", json!({"style": "outline"})),
            ];
            (
                LOAD_FILTER_PLOT,
                format!("Plot xview1 images around {place} (request {i})"),
                calls,
                format!("Plotted the xview1 images around {place}."),
                None,
            )
        }
        1 => {
            let topic = TOPICS[v];
            let calls = vec![
                call("web_search", json!({"query": topic})),
                call("open_url", json!({"url": "1"})),
                call("take_screenshot", json!({"filename": format!("task_{i}.png")})),
            ];
            (
                WEB_NAVIGATION,
                format!("Search Bing for \"{topic}\" and capture the top result (request {i})"),
                calls,
                format!("Opened the top result for \"{topic}\" and saved a screenshot."),
                None,
            )
        }
        _ => {
            let object = OBJECTS[v];
            let model = MODELS[v];
            let calls = vec![
                call("wiki_list_models", json!({"task": format!("{object} detection")})),
                call("wiki_model_card", json!({"model": model})),
                call("wiki_cite", json!({"title": model, "style": "bibtex"})),
            ];
            (
                INFORMATION_SEEKING,
                format!("Which model to use for {object} detection? (request {i})"),
                calls,
                format!("Use {model} for {object} detection."),
                Some(model.to_string()),
            )
        }
    };
    // rotate intents across k so every intent sees 1-, 2- and 3-call tasks
    let k = (i % 3 + 1 + i / 3) % 3 + 1;
    calls.truncate(k);
    Plan {
        task: TaskSpec {
            id: format!("task-{i:04}"),
            prompt,
            intent_truth: Some(intent.to_string()),
            required_tools: calls.iter().map(|c| c.name.clone()).collect(),
            expected_answer: expected,
        },
        calls,
        answer,
    }
}

/// Intent a deliberately misclassified task is routed to; never covers the
/// task's tools.
pub fn wrong_intent(truth: &str) -> &'static str {
    match truth {
        INFORMATION_SEEKING => WEB_NAVIGATION,
        _ => INFORMATION_SEEKING,
    }
}

/// Every fifth task, i.e. 20% of the corpus.
pub fn is_misclassified(index: usize) -> bool {
    index % 5 == 4
}

fn script_for(plan: &Plan, classify_as: &str) -> Vec<ScriptEntry> {
    let id = &plan.task.id;
    let k = plan.calls.len();
    let mut entries = vec![ScriptEntry {
        task: id.clone(),
        step: ScriptStep::Classify,
        respond: ScriptReply::Content(classify_as.to_string()),
        needs: None,
        narrow: None,
    }];
    for step in 0..=k {
        let respond = if step < k {
            ScriptReply::ToolCalls(vec![plan.calls[step].clone()])
        } else {
            ScriptReply::Content(plan.answer.clone())
        };
        let narrow = match step {
            0 if k > 1 => Some(ScriptReply::ToolCalls(plan.calls.clone())),
            1 if k > 1 => Some(ScriptReply::Content(plan.answer.clone())),
            _ => None,
        };
        entries.push(ScriptEntry {
            task: id.clone(),
            step: ScriptStep::Index(step),
            respond,
            needs: (step == 0).then(|| plan.task.required_tools.clone()),
            narrow: narrow.map(|respond| NarrowVariant {
                max_offered: NARROW_MAX_OFFERED,
                respond,
            }),
        });
    }
    entries
}

/// Registry, maps, corpus and scripts of one synthetic benchmark.
#[derive(Debug, Clone)]
pub struct SyntheticSuite {
    pub registry: ToolRegistry,
    pub intent_map: IntentMap,
    pub identity_map: IntentMap,
    pub corpus: Vec<TaskSpec>,
    /// Every task classified correctly.
    pub script: Vec<ScriptEntry>,
    /// Tasks selected by [`is_misclassified`] classified onto [`wrong_intent`].
    pub script_misclassified: Vec<ScriptEntry>,
}

pub fn generate(tasks: usize) -> SyntheticSuite {
    let plans: Vec<Plan> = (0..tasks).map(plan).collect();
    let truth = |p: &Plan| p.task.intent_truth.clone().expect("synthetic tasks carry truth");
    let script = plans.iter().flat_map(|p| script_for(p, &truth(p))).collect();
    let script_misclassified = plans
        .iter()
        .enumerate()
        .flat_map(|(i, p)| {
            let t = truth(p);
            let label = if is_misclassified(i) { wrong_intent(&t) } else { t.as_str() };
            script_for(p, label)
        })
        .collect();
    SyntheticSuite {
        registry: registry(),
        intent_map: intent_map(),
        identity_map: identity_intent_map(),
        corpus: plans.into_iter().map(|p| p.task).collect(),
        script,
        script_misclassified,
    }
}

pub fn default_suite() -> SyntheticSuite {
    generate(DEFAULT_TASKS)
}

impl SyntheticSuite {
    /// Writes `registry.json`, `intent_map.json`, `intent_map_identity.json`,
    /// `corpus.json`, `script.json` and `script_misclassified.json`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> io::Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("registry.json"), &self.registry.to_document())?;
        write_json(&dir.join("intent_map.json"), &self.intent_map)?;
        write_json(&dir.join("intent_map_identity.json"), &self.identity_map)?;
        write_json(&dir.join("corpus.json"), &self.corpus)?;
        write_json(&dir.join("script.json"), &self.script)?;
        write_json(&dir.join("script_misclassified.json"), &self.script_misclassified)
    }
}

/// Pretty JSON with a trailing newline, the layout of the checked-in fixtures.
pub fn pretty_json<T: serde::Serialize + ?Sized>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("fixture serializes") + "\n"
}

fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<()> {
    std::fs::write(path, pretty_json(value))
}
