//! Shared in-memory database fixtures for unit tests.

use crate::storage::{DatabaseHandle, Document};

fn sql_quote(text: &str) -> String {
    format!("'{}'", text.replace('\'', "''"))
}

/// Creates an all-TEXT table and fills it row by row.
pub fn load_table(handle: &DatabaseHandle, name: &str, columns: &[&str], rows: &[&[&str]]) {
    let cols: Vec<String> = columns.iter().map(|c| format!("\"{c}\" TEXT")).collect();
    handle
        .connection()
        .execute_batch(&format!("CREATE TABLE \"{name}\" ({})", cols.join(", ")))
        .unwrap();
    for row in rows {
        let values: Vec<String> = row.iter().map(|v| sql_quote(v)).collect();
        handle
            .connection()
            .execute_batch(&format!("INSERT INTO \"{name}\" VALUES ({})", values.join(", ")))
            .unwrap();
    }
}

fn doc(title: &str, content: &str) -> Document {
    Document { title: title.to_string(), content: content.to_string() }
}

/// Draft roster `w(name, position, school)` plus player articles.
pub fn roster_db() -> DatabaseHandle {
    let handle = DatabaseHandle::open_memory().unwrap();
    load_table(
        &handle,
        "w",
        &["name", "position", "school"],
        &[
            &["joshua fields", "right-handed pitcher", "university of georgia"],
            &["dennis raben", "outfielder", "university of miami"],
            &["matt jensen", "second basemen", "clovis east high school"],
        ],
    );
    handle
        .ingest_documents(&[
            doc(
                "kenn kasparek",
                "kenneth kasparek is a pitcher who was selected in the draft after attending \
                 the university of texas",
            ),
            doc(
                "pitcher",
                "in baseball the pitcher throws the ball toward the catcher to begin each play",
            ),
            doc(
                "josh fields (pitcher)",
                "joshua fields is an american former professional baseball pitcher drafted by \
                 the seattle mariners in the first round",
            ),
        ])
        .unwrap();
    handle
}

/// League history `w(year, champion)` plus season articles.
pub fn seasons_db() -> DatabaseHandle {
    let handle = DatabaseHandle::open_memory().unwrap();
    load_table(
        &handle,
        "w",
        &["year", "champion"],
        &[
            &["2018-19", "toronto raptors"],
            &["2019-20", "los angeles lakers"],
            &["2020-21", "milwaukee bucks"],
        ],
    );
    handle
        .ingest_documents(&[
            doc(
                "2019-20 nba season",
                "the 2019-20 nba season was suspended in march due to the covid-19 pandemic \
                 and resumed in the orlando bubble",
            ),
            doc(
                "2018-19 nba season",
                "the 2018-19 nba season concluded with the toronto raptors winning the \
                 championship",
            ),
            doc(
                "world health organization",
                "the organization coordinated the global response to the covid-19 pandemic \
                 declared in 2020",
            ),
            doc(
                "major league baseball",
                "a professional baseball league whose season runs from spring to autumn each \
                 year",
            ),
        ])
        .unwrap();
    handle
}

/// Match results `w(opponent, result)` plus a player biography.
pub fn matches_db() -> DatabaseHandle {
    let handle = DatabaseHandle::open_memory().unwrap();
    load_table(
        &handle,
        "w",
        &["opponent", "result"],
        &[&["alpha fc", "loss 0-1"], &["beta united", "draw 1-1"]],
    );
    handle
        .ingest_documents(&[
            doc(
                "pesamino victor",
                "pesamino victor is a samoan association footballer who plays as a defender \
                 for the national team",
            ),
            doc(
                "victor hugo",
                "a french poet and novelist of the romantic movement, author of les miserables",
            ),
        ])
        .unwrap();
    handle
}

/// Athletics entries `w(event, name)`; only the relay is a team event.
pub fn events_db() -> DatabaseHandle {
    let handle = DatabaseHandle::open_memory().unwrap();
    load_table(
        &handle,
        "w",
        &["event", "name"],
        &[
            &["marathon", "ana"],
            &["100m sprint", "bo"],
            &["4x400m relay", "cy"],
            &["marathon", "dee"],
        ],
    );
    handle
}
