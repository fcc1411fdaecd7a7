//! Plain-text extraction from HTML pages.
//!
//! A deliberately small extractor: drops non-content elements
//! (script/style/nav and friends), decodes common entities, and joins
//! visible text with blank lines at block boundaries. Pages that need a
//! scripting engine to render simply come out empty and are reported as
//! extraction failures, mirroring how loader-restricted sites drop out of
//! the corpus.

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    /// The page produced no visible text at all.
    #[error("no visible text extracted")]
    Empty,
}

/// Elements whose entire subtree is boilerplate or invisible.
const SKIPPED_SUBTREES: [&str; 10] = [
    "script", "style", "nav", "noscript", "template", "head", "iframe", "svg", "header", "footer",
];

/// Elements that terminate a text block.
const BLOCK_ELEMENTS: [&str; 17] = [
    "p",
    "div",
    "br",
    "li",
    "ul",
    "ol",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "tr",
    "table",
    "article",
    "section",
    "blockquote",
];

fn decode_entities(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        let end = rest[..rest.len().min(12)].find(';');
        let Some(end) = end else {
            out.push('&');
            rest = &rest[1..];
            continue;
        };
        let entity = &rest[1..end];
        let decoded = match entity {
            "amp" => Some('&'),
            "lt" => Some('<'),
            "gt" => Some('>'),
            "quot" => Some('"'),
            "apos" => Some('\''),
            "nbsp" => Some(' '),
            "ndash" => Some('–'),
            "mdash" => Some('—'),
            "hellip" => Some('…'),
            "rsquo" => Some('’'),
            "lsquo" => Some('‘'),
            "ldquo" => Some('“'),
            "rdquo" => Some('”'),
            _ => entity
                .strip_prefix('#')
                .and_then(|num| {
                    if let Some(hex) = num.strip_prefix('x').or_else(|| num.strip_prefix('X')) {
                        u32::from_str_radix(hex, 16).ok()
                    } else {
                        num.parse::<u32>().ok()
                    }
                })
                .and_then(char::from_u32),
        };
        match decoded {
            Some(c) => {
                out.push(c);
                rest = &rest[end + 1..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn tag_name(tag_body: &str) -> String {
    tag_body
        .trim_start_matches('/')
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase()
}

/// Extracts visible text from `html`, paragraphs separated by blank lines.
pub fn html_to_text(html: &str) -> Result<String, ExtractError> {
    let mut blocks: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut skip_until: Option<String> = None;
    let mut rest = html;

    let flush = |current: &mut String, blocks: &mut Vec<String>| {
        let cleaned = current.split_whitespace().collect::<Vec<_>>().join(" ");
        if !cleaned.is_empty() {
            blocks.push(cleaned);
        }
        current.clear();
    };

    while let Some(lt) = rest.find('<') {
        let (text, after) = rest.split_at(lt);
        if skip_until.is_none() {
            current.push_str(&decode_entities(text));
        }
        // Comments do not follow tag syntax.
        if let Some(comment) = after.strip_prefix("<!--") {
            rest = comment.find("-->").map(|i| &comment[i + 3..]).unwrap_or("");
            continue;
        }
        let Some(gt) = after.find('>') else {
            rest = "";
            break;
        };
        let tag_body = &after[1..gt];
        rest = &after[gt + 1..];
        let name = tag_name(tag_body);
        let closing = tag_body.starts_with('/');

        if let Some(waiting_for) = &skip_until {
            if closing && name == *waiting_for {
                skip_until = None;
            }
            continue;
        }
        if !closing && SKIPPED_SUBTREES.contains(&name.as_str()) {
            // Void usage (e.g. <br/> inside) cannot nest; wait for the
            // matching close tag unless the tag self-closes.
            if !tag_body.ends_with('/') {
                skip_until = Some(name);
            }
            continue;
        }
        if BLOCK_ELEMENTS.contains(&name.as_str()) {
            flush(&mut current, &mut blocks);
        }
    }
    if skip_until.is_none() {
        current.push_str(&decode_entities(rest));
    }
    flush(&mut current, &mut blocks);

    if blocks.is_empty() {
        return Err(ExtractError::Empty);
    }
    Ok(blocks.join("\n\n"))
}
