//! Built-in catalogs with realistic statistics, used when no database is
//! available.

use chrono::NaiveDate;

use super::{ColumnMeta, DataType, IndexMeta, JoinEdge, SchemaCatalog, TableMeta};
use crate::model::Value;

pub type CatalogFactory = fn() -> SchemaCatalog;

pub const BUILTIN_CATALOGS: &[(&str, CatalogFactory)] =
    &[("users_orders", users_orders), ("tpch", tpch), ("imdb", imdb)];

pub fn builtin(name: &str) -> Option<SchemaCatalog> {
    BUILTIN_CATALOGS.iter().find(|(n, _)| *n == name).map(|(_, f)| f())
}

fn int(name: &str, min: i64, max: i64, distinct: u64) -> ColumnMeta {
    ColumnMeta {
        name: name.into(),
        data_type: DataType::Integer,
        distinct_count: distinct,
        min: Some(Value::Int(min)),
        max: Some(Value::Int(max)),
        common_values: vec![],
    }
}

fn real(name: &str, min: f64, max: f64, distinct: u64) -> ColumnMeta {
    ColumnMeta {
        name: name.into(),
        data_type: DataType::Real,
        distinct_count: distinct,
        min: Some(Value::Real(min)),
        max: Some(Value::Real(max)),
        common_values: vec![],
    }
}

fn date(name: &str, min: (i32, u32, u32), max: (i32, u32, u32), distinct: u64) -> ColumnMeta {
    let d = |(y, m, day)| NaiveDate::from_ymd_opt(y, m, day).expect("fixture date");
    ColumnMeta {
        name: name.into(),
        data_type: DataType::Date,
        distinct_count: distinct,
        min: Some(Value::Date(d(min))),
        max: Some(Value::Date(d(max))),
        common_values: vec![],
    }
}

fn text(name: &str, distinct: u64, common: &[&str]) -> ColumnMeta {
    ColumnMeta {
        name: name.into(),
        data_type: DataType::Text,
        distinct_count: distinct,
        min: None,
        max: None,
        common_values: common.iter().map(|s| s.to_string()).collect(),
    }
}

fn table(name: &str, rows: u64, bytes: u64, pk: &[&str], columns: Vec<ColumnMeta>) -> TableMeta {
    TableMeta {
        name: name.into(),
        row_count: rows,
        size_bytes: bytes,
        columns,
        primary_key: pk.iter().map(|s| s.to_string()).collect(),
    }
}

fn fk(from: &str, from_cols: &[&str], to: &str, to_cols: &[&str]) -> JoinEdge {
    JoinEdge {
        from_table: from.into(),
        from_columns: from_cols.iter().map(|s| s.to_string()).collect(),
        to_table: to.into(),
        to_columns: to_cols.iter().map(|s| s.to_string()).collect(),
    }
}

fn pk_indexes(tables: &[TableMeta]) -> Vec<IndexMeta> {
    tables
        .iter()
        .filter(|t| !t.primary_key.is_empty())
        .map(|t| IndexMeta { table: t.name.clone(), name: format!("{}_pkey", t.name), columns: t.primary_key.clone() })
        .collect()
}

/// Two tables joined by one foreign key.
pub fn users_orders() -> SchemaCatalog {
    let tables = vec![
        table(
            "users",
            10_000,
            1_400_000,
            &["id"],
            vec![
                int("id", 1, 10_000, 10_000),
                int("age", 18, 90, 73),
                text("country", 12, &["US", "DE", "FR", "JP", "BR", "IN", "CN", "GB", "CA", "AU", "ES", "IT"]),
                date("signup_date", (2015, 1, 1), (2024, 12, 31), 3653),
            ],
        ),
        table(
            "orders",
            100_000,
            9_800_000,
            &["id"],
            vec![
                int("id", 1, 100_000, 100_000),
                int("user_id", 1, 10_000, 10_000),
                real("amount", 1.0, 5000.0, 49_000),
                text("status", 4, &["pending", "paid", "shipped", "cancelled"]),
                date("order_date", (2015, 1, 1), (2024, 12, 31), 3653),
            ],
        ),
    ];
    SchemaCatalog {
        indexes: pk_indexes(&tables),
        tables,
        join_edges: vec![fk("orders", &["user_id"], "users", &["id"])],
    }
}

/// TPC-H at scale factor 1.
pub fn tpch() -> SchemaCatalog {
    let tables = vec![
        table(
            "region",
            5,
            8_192,
            &["r_regionkey"],
            vec![
                int("r_regionkey", 0, 4, 5),
                text("r_name", 5, &["AFRICA", "AMERICA", "ASIA", "EUROPE", "MIDDLE EAST"]),
            ],
        ),
        table(
            "nation",
            25,
            8_192,
            &["n_nationkey"],
            vec![
                int("n_nationkey", 0, 24, 25),
                text(
                    "n_name",
                    25,
                    &[
                        "ALGERIA", "ARGENTINA", "BRAZIL", "CANADA", "CHINA", "EGYPT", "ETHIOPIA", "FRANCE", "GERMANY",
                        "INDIA", "INDONESIA", "IRAN", "IRAQ", "JAPAN", "JORDAN", "KENYA", "MOROCCO", "MOZAMBIQUE",
                        "PERU", "ROMANIA", "RUSSIA", "SAUDI ARABIA", "UNITED KINGDOM", "UNITED STATES", "VIETNAM",
                    ],
                ),
                int("n_regionkey", 0, 4, 5),
            ],
        ),
        table(
            "part",
            200_000,
            33_000_000,
            &["p_partkey"],
            vec![
                int("p_partkey", 1, 200_000, 200_000),
                text("p_mfgr", 5, &["Manufacturer#1", "Manufacturer#2", "Manufacturer#3", "Manufacturer#4", "Manufacturer#5"]),
                text("p_brand", 25, &["Brand#11", "Brand#12", "Brand#13", "Brand#21", "Brand#22", "Brand#23", "Brand#31", "Brand#32", "Brand#33", "Brand#41", "Brand#42", "Brand#43", "Brand#51", "Brand#52", "Brand#53"]),
                int("p_size", 1, 50, 50),
                text("p_container", 40, &["SM CASE", "SM BOX", "MED BAG", "MED BOX", "LG CASE", "LG BOX", "JUMBO PKG", "WRAP BOX"]),
                real("p_retailprice", 901.0, 2098.99, 20_899),
            ],
        ),
        table(
            "supplier",
            10_000,
            1_900_000,
            &["s_suppkey"],
            vec![
                int("s_suppkey", 1, 10_000, 10_000),
                int("s_nationkey", 0, 24, 25),
                real("s_acctbal", -999.99, 9999.93, 9_955),
            ],
        ),
        table(
            "partsupp",
            800_000,
            143_000_000,
            &["ps_partkey", "ps_suppkey"],
            vec![
                int("ps_partkey", 1, 200_000, 200_000),
                int("ps_suppkey", 1, 10_000, 10_000),
                int("ps_availqty", 1, 9_999, 9_999),
                real("ps_supplycost", 1.0, 1000.0, 99_865),
            ],
        ),
        table(
            "customer",
            150_000,
            29_000_000,
            &["c_custkey"],
            vec![
                int("c_custkey", 1, 150_000, 150_000),
                int("c_nationkey", 0, 24, 25),
                real("c_acctbal", -999.99, 9999.99, 140_187),
                text("c_mktsegment", 5, &["AUTOMOBILE", "BUILDING", "FURNITURE", "HOUSEHOLD", "MACHINERY"]),
            ],
        ),
        table(
            "orders",
            1_500_000,
            214_000_000,
            &["o_orderkey"],
            vec![
                int("o_orderkey", 1, 6_000_000, 1_500_000),
                int("o_custkey", 1, 149_999, 99_996),
                text("o_orderstatus", 3, &["F", "O", "P"]),
                real("o_totalprice", 857.71, 555_285.16, 1_464_556),
                date("o_orderdate", (1992, 1, 1), (1998, 8, 2), 2_406),
                text("o_orderpriority", 5, &["1-URGENT", "2-HIGH", "3-MEDIUM", "4-NOT SPECIFIED", "5-LOW"]),
                int("o_shippriority", 0, 0, 1),
            ],
        ),
        table(
            "lineitem",
            6_001_215,
            1_080_000_000,
            &["l_orderkey", "l_linenumber"],
            vec![
                int("l_orderkey", 1, 6_000_000, 1_500_000),
                int("l_partkey", 1, 200_000, 200_000),
                int("l_suppkey", 1, 10_000, 10_000),
                int("l_linenumber", 1, 7, 7),
                real("l_quantity", 1.0, 50.0, 50),
                real("l_extendedprice", 901.0, 104_949.5, 933_900),
                real("l_discount", 0.0, 0.1, 11),
                real("l_tax", 0.0, 0.08, 9),
                text("l_returnflag", 3, &["A", "N", "R"]),
                text("l_linestatus", 2, &["F", "O"]),
                date("l_shipdate", (1992, 1, 2), (1998, 12, 1), 2_526),
                date("l_commitdate", (1992, 1, 31), (1998, 10, 31), 2_466),
                date("l_receiptdate", (1992, 1, 3), (1998, 12, 31), 2_554),
                text("l_shipmode", 7, &["AIR", "FOB", "MAIL", "RAIL", "REG AIR", "SHIP", "TRUCK"]),
            ],
        ),
    ];
    SchemaCatalog {
        indexes: pk_indexes(&tables),
        tables,
        join_edges: vec![
            fk("nation", &["n_regionkey"], "region", &["r_regionkey"]),
            fk("supplier", &["s_nationkey"], "nation", &["n_nationkey"]),
            fk("customer", &["c_nationkey"], "nation", &["n_nationkey"]),
            fk("partsupp", &["ps_partkey"], "part", &["p_partkey"]),
            fk("partsupp", &["ps_suppkey"], "supplier", &["s_suppkey"]),
            fk("orders", &["o_custkey"], "customer", &["c_custkey"]),
            fk("lineitem", &["l_orderkey"], "orders", &["o_orderkey"]),
            fk("lineitem", &["l_partkey", "l_suppkey"], "partsupp", &["ps_partkey", "ps_suppkey"]),
        ],
    }
}

/// The IMDB schema used by the Join Order Benchmark.
pub fn imdb() -> SchemaCatalog {
    let id = |max: i64| int("id", 1, max, max as u64);
    let small = |name: &str, rows: u64, label: &str, values: &[&str]| {
        table(name, rows, 8_192, &["id"], vec![id(rows as i64), text(label, rows, values)])
    };
    let tables = vec![
        table(
            "aka_name",
            901_343,
            88_000_000,
            &["id"],
            vec![id(901_343), int("person_id", 4, 4_167_489, 588_222), text("name", 832_000, &[])],
        ),
        table(
            "aka_title",
            361_472,
            48_000_000,
            &["id"],
            vec![
                id(361_472),
                int("movie_id", 0, 2_525_672, 205_631),
                int("kind_id", 1, 7, 7),
                int("production_year", 1880, 2019, 137),
            ],
        ),
        table(
            "cast_info",
            36_244_344,
            3_300_000_000,
            &["id"],
            vec![
                id(36_244_344),
                int("person_id", 1, 4_061_926, 4_051_810),
                int("movie_id", 1, 2_525_975, 2_331_601),
                int("person_role_id", 1, 3_140_339, 3_140_339),
                int("nr_order", 0, 1_000, 1_001),
                int("role_id", 1, 12, 12),
            ],
        ),
        table(
            "char_name",
            3_140_339,
            290_000_000,
            &["id"],
            vec![id(3_140_339), text("name", 3_140_339, &[])],
        ),
        small("comp_cast_type", 4, "kind", &["cast", "crew", "complete", "complete+verified"]),
        table(
            "company_name",
            234_997,
            30_000_000,
            &["id"],
            vec![
                id(234_997),
                text("name", 232_000, &[]),
                text("country_code", 215, &["[us]", "[gb]", "[de]", "[fr]", "[ca]", "[jp]", "[it]", "[in]", "[es]", "[nl]"]),
            ],
        ),
        small("company_type", 4, "kind", &["distributors", "production companies", "special effects companies", "miscellaneous companies"]),
        table(
            "complete_cast",
            135_086,
            6_800_000,
            &["id"],
            vec![
                id(135_086),
                int("movie_id", 285, 2_525_971, 93_514),
                int("subject_id", 1, 2, 2),
                int("status_id", 3, 4, 2),
            ],
        ),
        table("info_type", 113, 8_192, &["id"], vec![id(113), text("info", 113, &["runtimes", "genres", "rating", "votes", "budget", "release dates", "languages", "countries"])]),
        table("keyword", 134_170, 9_600_000, &["id"], vec![id(134_170), text("keyword", 134_170, &[])]),
        small("kind_type", 7, "kind", &["movie", "tv series", "tv movie", "video movie", "tv mini series", "video game", "episode"]),
        table("link_type", 18, 8_192, &["id"], vec![id(18), text("link", 18, &["follows", "followed by", "remake of", "remade as", "references", "referenced in", "spoofs", "spoofed in", "features", "featured in"])]),
        table(
            "movie_companies",
            2_609_129,
            210_000_000,
            &["id"],
            vec![
                id(2_609_129),
                int("movie_id", 2, 2_525_745, 1_087_236),
                int("company_id", 1, 234_997, 234_997),
                int("company_type_id", 1, 2, 2),
            ],
        ),
        table(
            "movie_info",
            14_835_720,
            2_100_000_000,
            &["id"],
            vec![
                id(14_835_720),
                int("movie_id", 1, 2_526_430, 2_468_825),
                int("info_type_id", 1, 110, 71),
            ],
        ),
        table(
            "movie_info_idx",
            1_380_035,
            95_000_000,
            &["id"],
            vec![
                id(1_380_035),
                int("movie_id", 2, 2_525_793, 459_925),
                int("info_type_id", 99, 113, 5),
            ],
        ),
        table(
            "movie_keyword",
            4_523_930,
            270_000_000,
            &["id"],
            vec![
                id(4_523_930),
                int("movie_id", 2, 2_525_971, 476_794),
                int("keyword_id", 1, 134_170, 134_170),
            ],
        ),
        table(
            "movie_link",
            29_997,
            2_200_000,
            &["id"],
            vec![
                id(29_997),
                int("movie_id", 284, 2_524_994, 6_411),
                int("linked_movie_id", 284, 2_525_882, 16_169),
                int("link_type_id", 1, 17, 16),
            ],
        ),
        table(
            "name",
            4_167_491,
            560_000_000,
            &["id"],
            vec![
                id(4_167_491),
                text("name", 4_061_926, &[]),
                text("gender", 2, &["m", "f"]),
            ],
        ),
        table(
            "person_info",
            2_963_664,
            480_000_000,
            &["id"],
            vec![
                id(2_963_664),
                int("person_id", 1, 4_167_491, 550_721),
                int("info_type_id", 15, 39, 22),
            ],
        ),
        small("role_type", 12, "role", &["actor", "actress", "producer", "writer", "cinematographer", "composer", "costume designer", "director", "editor", "miscellaneous crew", "production designer", "guest"]),
        table(
            "title",
            2_528_312,
            310_000_000,
            &["id"],
            vec![
                id(2_528_312),
                text("title", 1_946_000, &[]),
                int("kind_id", 1, 7, 6),
                int("production_year", 1880, 2019, 133),
                int("episode_nr", 1, 91_821, 15_000),
            ],
        ),
    ];
    let to = |from: &str, col: &str, target: &str| fk(from, &[col], target, &["id"]);
    SchemaCatalog {
        indexes: pk_indexes(&tables),
        tables,
        join_edges: vec![
            to("aka_name", "person_id", "name"),
            to("aka_title", "movie_id", "title"),
            to("aka_title", "kind_id", "kind_type"),
            to("cast_info", "person_id", "name"),
            to("cast_info", "movie_id", "title"),
            to("cast_info", "person_role_id", "char_name"),
            to("cast_info", "role_id", "role_type"),
            to("complete_cast", "movie_id", "title"),
            to("complete_cast", "subject_id", "comp_cast_type"),
            to("complete_cast", "status_id", "comp_cast_type"),
            to("movie_companies", "movie_id", "title"),
            to("movie_companies", "company_id", "company_name"),
            to("movie_companies", "company_type_id", "company_type"),
            to("movie_info", "movie_id", "title"),
            to("movie_info", "info_type_id", "info_type"),
            to("movie_info_idx", "movie_id", "title"),
            to("movie_info_idx", "info_type_id", "info_type"),
            to("movie_keyword", "movie_id", "title"),
            to("movie_keyword", "keyword_id", "keyword"),
            to("movie_link", "movie_id", "title"),
            to("movie_link", "linked_movie_id", "title"),
            to("movie_link", "link_type_id", "link_type"),
            to("person_info", "person_id", "name"),
            to("person_info", "info_type_id", "info_type"),
            to("title", "kind_id", "kind_type"),
        ],
    }
}
