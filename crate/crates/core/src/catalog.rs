//! eBPF domain knowledge: program types, helper prototypes, map type
//! constraints and compatibility tables.
//!
//! The catalog is data. [`DEFAULT_CATALOG_TOML`] is bundled; a different
//! table can be supplied with [`Catalog::from_toml`]. Loading resolves the
//! helper-group includes into flat per-program-type availability sets and
//! checks the table's own invariants.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::Deserialize;
use thiserror::Error;

/// The bundled catalog.
pub const DEFAULT_CATALOG_TOML: &str = include_str!("../data/catalog.toml");

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident = $code:expr, $text:expr;)* }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant,)*
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant,)*];

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => $text,)* }
            }

            pub fn code(self) -> u16 {
                match self { $($name::$variant => $code,)* }
            }

            pub fn from_code(code: u16) -> Option<Self> {
                match code { $($code => Some($name::$variant),)* _ => None }
            }

            pub fn from_name(text: &str) -> Option<Self> {
                Self::ALL.iter().copied().find(|v| v.name().eq_ignore_ascii_case(text))
            }

            /// Dense index into [`Self::ALL`].
            pub fn index(self) -> usize {
                Self::ALL.iter().position(|v| *v == self).unwrap_or(0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

named_enum! {
    /// Modeled program types; codes follow the kernel's `bpf_prog_type`.
    ProgramTypeId {
        SocketFilter = 1, "SOCKET_FILTER";
        Kprobe = 2, "KPROBE";
        Tracepoint = 5, "TRACEPOINT";
        Xdp = 6, "XDP";
        PerfEvent = 7, "PERF_EVENT";
        CgroupSock = 9, "CGROUP_SOCK";
    }
}

named_enum! {
    /// Modeled map types; codes follow the kernel's `bpf_map_type`.
    MapTypeId {
        Hash = 1, "HASH";
        Array = 2, "ARRAY";
        ProgArray = 3, "PROG_ARRAY";
        PerfEventArray = 4, "PERF_EVENT_ARRAY";
        PercpuArray = 6, "PERCPU_ARRAY";
        StackTrace = 7, "STACK_TRACE";
        LruHash = 9, "LRU_HASH";
        CgroupStorage = 19, "CGROUP_STORAGE";
        Queue = 22, "QUEUE";
        Stack = 23, "STACK";
        Ringbuf = 27, "RINGBUF";
    }
}

named_enum! {
    /// Abstract value types tracked by the verifier.
    ValueType {
        Scalar = 1, "SCALAR";
        PtrToCtx = 2, "PTR_TO_CTX";
        PtrToStack = 3, "PTR_TO_STACK";
        ConstPtrToMap = 4, "CONST_PTR_TO_MAP";
        PtrToMapValue = 5, "PTR_TO_MAP_VALUE";
        PtrToMapValueOrNull = 6, "PTR_TO_MAP_VALUE_OR_NULL";
        PtrToMem = 7, "PTR_TO_MEM";
        PtrToMemOrNull = 8, "PTR_TO_MEM_OR_NULL";
        PtrToSockCommon = 9, "PTR_TO_SOCK_COMMON";
        Uninit = 10, "UNINIT";
    }
}

named_enum! {
    /// Helper argument kinds.
    ArgType {
        Anything = 1, "ANYTHING";
        ConstSize = 2, "CONST_SIZE";
        ConstSizeOrZero = 3, "CONST_SIZE_OR_ZERO";
        PtrToMem = 4, "PTR_TO_MEM";
        PtrToUninitMem = 5, "PTR_TO_UNINIT_MEM";
        PtrToMapKey = 6, "PTR_TO_MAP_KEY";
        PtrToMapValue = 7, "PTR_TO_MAP_VALUE";
        PtrToUninitMapValue = 8, "PTR_TO_UNINIT_MAP_VALUE";
        ConstMapPtr = 9, "CONST_MAP_PTR";
        PtrToCtx = 10, "PTR_TO_CTX";
        PtrToRef = 11, "PTR_TO_REF";
    }
}

named_enum! {
    RetType {
        Integer = 1, "INTEGER";
        Void = 2, "VOID";
        PtrToMapValueOrNull = 3, "PTR_TO_MAP_VALUE_OR_NULL";
        PtrToMemOrNull = 4, "PTR_TO_MEM_OR_NULL";
    }
}

named_enum! {
    AttachKind {
        Socket = 1, "socket";
        TraceEvent = 2, "trace_event";
        Cgroup = 3, "cgroup";
        Device = 4, "device";
    }
}

named_enum! {
    /// Execution context in which an attached program runs when its event fires.
    ExecContext {
        Task = 1, "task";
        IrqDisabled = 2, "irq_disabled";
        Interrupt = 3, "interrupt";
    }
}

named_enum! {
    LockContext {
        None = 0, "none";
        TakesBucketLock = 1, "takes_bucket_lock";
        TakesQueueLock = 2, "takes_queue_lock";
    }
}

named_enum! {
    /// Lock protecting a map type's mutating operations.
    MapLock {
        None = 0, "none";
        Bucket = 1, "bucket";
        Queue = 2, "queue";
    }
}

impl ValueType {
    pub fn is_pointer(self) -> bool {
        !matches!(self, ValueType::Scalar | ValueType::Uninit)
    }

    pub fn is_nullable(self) -> bool {
        matches!(self, ValueType::PtrToMapValueOrNull | ValueType::PtrToMemOrNull)
    }

    /// The non-null form of a nullable pointer type.
    pub fn non_null(self) -> ValueType {
        match self {
            ValueType::PtrToMapValueOrNull => ValueType::PtrToMapValue,
            ValueType::PtrToMemOrNull => ValueType::PtrToMem,
            other => other,
        }
    }

    pub fn nullable(self) -> ValueType {
        match self {
            ValueType::PtrToMapValue => ValueType::PtrToMapValueOrNull,
            ValueType::PtrToMem => ValueType::PtrToMemOrNull,
            other => other,
        }
    }
}

impl ArgType {
    pub fn is_size(self) -> bool {
        matches!(self, ArgType::ConstSize | ArgType::ConstSizeOrZero)
    }
}

/// Helper identifier; the numeric value is the `call` immediate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
#[serde(transparent)]
pub struct HelperId(pub u32);

impl fmt::Display for HelperId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Helper ids with dedicated runtime semantics.
pub mod helper_ids {
    use super::HelperId;

    pub const MAP_LOOKUP_ELEM: HelperId = HelperId(1);
    pub const MAP_UPDATE_ELEM: HelperId = HelperId(2);
    pub const MAP_DELETE_ELEM: HelperId = HelperId(3);
    pub const KTIME_GET_NS: HelperId = HelperId(5);
    pub const GET_PRANDOM_U32: HelperId = HelperId(7);
    pub const GET_SMP_PROCESSOR_ID: HelperId = HelperId(8);
    pub const TAIL_CALL: HelperId = HelperId(12);
    pub const GET_CURRENT_PID_TGID: HelperId = HelperId(14);
    pub const PERF_EVENT_OUTPUT: HelperId = HelperId(25);
    pub const SKB_LOAD_BYTES: HelperId = HelperId(26);
    pub const GET_STACKID: HelperId = HelperId(27);
    pub const MAP_PUSH_ELEM: HelperId = HelperId(87);
    pub const MAP_POP_ELEM: HelperId = HelperId(88);
    pub const MAP_PEEK_ELEM: HelperId = HelperId(89);
    pub const PROBE_READ_KERNEL: HelperId = HelperId(113);
    pub const RINGBUF_OUTPUT: HelperId = HelperId(130);
    pub const RINGBUF_RESERVE: HelperId = HelperId(131);
    pub const RINGBUF_SUBMIT: HelperId = HelperId(132);
    pub const RINGBUF_DISCARD: HelperId = HelperId(133);
    pub const RINGBUF_QUERY: HelperId = HelperId(134);
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct HelperProto {
    pub id: HelperId,
    pub name: String,
    pub args: Vec<ArgType>,
    pub ret: RetType,
    #[serde(default)]
    pub maps: Vec<MapTypeId>,
    #[serde(default)]
    pub acquires: Option<String>,
    #[serde(default)]
    pub releases: Option<String>,
    #[serde(default = "no_lock")]
    pub lock: LockContext,
    #[serde(default)]
    pub map_reads: bool,
    #[serde(default)]
    pub map_writes: bool,
}

fn no_lock() -> LockContext {
    LockContext::None
}

fn no_map_lock() -> MapLock {
    MapLock::None
}

impl HelperProto {
    pub fn ret_nullable(&self) -> bool {
        matches!(self.ret, RetType::PtrToMapValueOrNull | RetType::PtrToMemOrNull)
    }

    /// Position of the map-pointer argument, if any.
    pub fn map_arg(&self) -> Option<usize> {
        self.args.iter().position(|a| *a == ArgType::ConstMapPtr)
    }

    /// Value type the verifier assigns to r0 after the call.
    pub fn ret_value_type(&self) -> ValueType {
        match self.ret {
            RetType::Integer => ValueType::Scalar,
            RetType::Void => ValueType::Uninit,
            RetType::PtrToMapValueOrNull => ValueType::PtrToMapValueOrNull,
            RetType::PtrToMemOrNull => ValueType::PtrToMemOrNull,
        }
    }
}

/// Admissible values for one numeric attribute: either an explicit set or a
/// bounded range with optional divisibility and power-of-two requirements.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct AttrRange {
    #[serde(default)]
    pub set: Vec<u32>,
    #[serde(default)]
    pub min: u32,
    #[serde(default)]
    pub max: u32,
    #[serde(default = "one")]
    pub multiple_of: u32,
    #[serde(default)]
    pub power_of_two: bool,
}

fn one() -> u32 {
    1
}

impl AttrRange {
    pub fn contains(&self, v: u32) -> bool {
        if !self.set.is_empty() {
            return self.set.contains(&v);
        }
        v >= self.min
            && v <= self.max
            && v % self.multiple_of.max(1) == 0
            && (!self.power_of_two || v.is_power_of_two())
    }

    /// Every admissible value, in ascending order.
    pub fn values(&self) -> Vec<u32> {
        if !self.set.is_empty() {
            let mut v = self.set.clone();
            v.sort_unstable();
            return v;
        }
        let step = self.multiple_of.max(1);
        let start = self.min.div_ceil(step) * step;
        (start..=self.max).step_by(step as usize).filter(|v| self.contains(*v)).collect()
    }

    pub fn is_fixed_zero(&self) -> bool {
        self.set == [0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapTypeSpec {
    pub id: MapTypeId,
    pub key_size: AttrRange,
    pub value_size: AttrRange,
    pub max_entries: AttrRange,
    /// Each group holds mutually exclusive flag bits.
    pub flag_groups: Vec<Vec<u32>>,
    pub lock: MapLock,
}

impl MapTypeSpec {
    pub fn allowed_flags(&self) -> u32 {
        self.flag_groups.iter().flatten().fold(0, |acc, f| acc | f)
    }
}

/// Attributes of a map to be created.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MapSpecRequest {
    pub map_type: MapTypeId,
    pub key_size: u32,
    pub value_size: u32,
    pub max_entries: u32,
    pub flags: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AttrInvalid {
    #[error("attr_invalid: key_size {0}")]
    KeySize(u32),
    #[error("attr_invalid: value_size {0}")]
    ValueSize(u32),
    #[error("attr_invalid: max_entries {0}")]
    MaxEntries(u32),
    #[error("attr_invalid: flags {0:#x}")]
    Flags(u32),
    #[error("attr_invalid: map type not in catalog")]
    MapType,
}

impl AttrInvalid {
    pub fn attribute(&self) -> &'static str {
        match self {
            AttrInvalid::KeySize(_) => "key_size",
            AttrInvalid::ValueSize(_) => "value_size",
            AttrInvalid::MaxEntries(_) => "max_entries",
            AttrInvalid::Flags(_) => "flags",
            AttrInvalid::MapType => "map_type",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct ContextField {
    pub name: String,
    pub offset: u32,
    pub width: u32,
    pub read: bool,
    pub write: bool,
    pub yields: ValueType,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct ContextDescriptor {
    pub size: u32,
    pub fields: Vec<ContextField>,
}

impl ContextDescriptor {
    /// The field exactly covering `[offset, offset + width)`.
    pub fn field_at(&self, offset: i64, width: u32) -> Option<&ContextField> {
        self.fields.iter().find(|f| f.offset as i64 == offset && f.width == width)
    }

    pub fn field(&self, name: &str) -> Option<&ContextField> {
        self.fields.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramTypeSpec {
    pub id: ProgramTypeId,
    pub section_name: String,
    pub attach_kind: AttachKind,
    pub test_run: bool,
    pub event_context: ExecContext,
    pub context: ContextDescriptor,
    /// Flattened availability, ascending by id.
    pub available_helpers: Vec<HelperId>,
    pub compatible_maps: Vec<MapTypeId>,
    pub forbidden_map_flags: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("catalog parse error: {0}")]
    Parse(String),
    #[error("unsupported catalog version {0}")]
    Version(u32),
    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },
    #[error("duplicate {kind} `{name}`")]
    Duplicate { kind: &'static str, name: String },
    #[error("helper group include cycle through `{0}`")]
    IncludeCycle(String),
    #[error("{0} is missing from the catalog")]
    Missing(String),
    #[error("invalid catalog entry `{name}`: {reason}")]
    Invalid { name: String, reason: &'static str },
    #[error("helper {0} takes no map argument")]
    NoMapArgument(HelperId),
}

#[derive(Deserialize)]
struct FlagDef {
    name: String,
    bit: u32,
}

#[derive(Deserialize)]
struct ArgCompatDef {
    arg: ArgType,
    accepts: Vec<ValueType>,
}

#[derive(Deserialize)]
struct HelperGroupDef {
    name: String,
    helpers: Vec<String>,
    #[serde(default)]
    include: Vec<String>,
}

#[derive(Deserialize)]
struct MapTypeDef {
    id: MapTypeId,
    key_size: AttrRange,
    value_size: AttrRange,
    max_entries: AttrRange,
    flag_groups: Vec<Vec<String>>,
    #[serde(default = "no_map_lock")]
    lock: MapLock,
}

#[derive(Deserialize)]
struct ProgramTypeDef {
    id: ProgramTypeId,
    section: String,
    attach: AttachKind,
    test_run: bool,
    event_context: ExecContext,
    helper_groups: Vec<String>,
    compatible_maps: Vec<MapTypeId>,
    forbidden_map_flags: Vec<String>,
    context: ContextDescriptor,
}

#[derive(Deserialize)]
struct CatalogFile {
    version: u32,
    map_flags: Vec<FlagDef>,
    arg_compat: Vec<ArgCompatDef>,
    helper_groups: Vec<HelperGroupDef>,
    helpers: Vec<HelperProto>,
    map_types: Vec<MapTypeDef>,
    program_types: Vec<ProgramTypeDef>,
}

/// The loaded, validated and flattened catalog. Immutable after loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    pub version: u32,
    flag_names: Vec<(String, u32)>,
    arg_compat: Vec<Vec<ValueType>>,
    helpers: Vec<HelperProto>,
    map_types: Vec<MapTypeSpec>,
    program_types: Vec<ProgramTypeSpec>,
}

fn unknown(kind: &'static str, name: &str) -> CatalogError {
    CatalogError::Unknown { kind, name: name.to_string() }
}

impl Catalog {
    /// The bundled default catalog.
    pub fn builtin() -> Catalog {
        Catalog::from_toml(DEFAULT_CATALOG_TOML).expect("bundled catalog is valid")
    }

    pub fn from_toml(text: &str) -> Result<Catalog, CatalogError> {
        let file: CatalogFile =
            toml::from_str(text).map_err(|e| CatalogError::Parse(e.to_string()))?;
        Self::resolve(file)
    }

    fn resolve(file: CatalogFile) -> Result<Catalog, CatalogError> {
        if file.version != 1 {
            return Err(CatalogError::Version(file.version));
        }
        let mut flag_names: Vec<(String, u32)> = Vec::new();
        for f in &file.map_flags {
            if f.bit == 0 || !f.bit.is_power_of_two() {
                return Err(CatalogError::Invalid { name: f.name.clone(), reason: "flag bit must be a single bit" });
            }
            if flag_names.iter().any(|(n, b)| *n == f.name || *b == f.bit) {
                return Err(CatalogError::Duplicate { kind: "map flag", name: f.name.clone() });
            }
            flag_names.push((f.name.clone(), f.bit));
        }
        let flag_bit = |name: &str| {
            flag_names.iter().find(|(n, _)| n == name).map(|(_, b)| *b).ok_or_else(|| unknown("map flag", name))
        };

        let mut arg_compat: Vec<Vec<ValueType>> = alloc::vec![Vec::new(); ArgType::ALL.len()];
        for entry in &file.arg_compat {
            let slot = &mut arg_compat[entry.arg.index()];
            if !slot.is_empty() {
                return Err(CatalogError::Duplicate { kind: "arg_compat", name: entry.arg.name().into() });
            }
            let mut accepts = entry.accepts.clone();
            accepts.sort_unstable();
            accepts.dedup();
            if accepts.is_empty() || accepts.contains(&ValueType::Uninit) {
                return Err(CatalogError::Invalid { name: entry.arg.name().into(), reason: "accepted set must be non-empty and initialized" });
            }
            *slot = accepts;
        }
        for arg in ArgType::ALL {
            if arg_compat[arg.index()].is_empty() {
                return Err(CatalogError::Missing(alloc::format!("arg_compat for {arg}")));
            }
        }

        let mut map_types: Vec<MapTypeSpec> = Vec::new();
        for def in &file.map_types {
            if map_types.iter().any(|m| m.id == def.id) {
                return Err(CatalogError::Duplicate { kind: "map type", name: def.id.name().into() });
            }
            let mut groups = Vec::new();
            for g in &def.flag_groups {
                groups.push(g.iter().map(|n| flag_bit(n)).collect::<Result<Vec<_>, _>>()?);
            }
            let spec = MapTypeSpec {
                id: def.id,
                key_size: def.key_size.clone(),
                value_size: def.value_size.clone(),
                max_entries: def.max_entries.clone(),
                flag_groups: groups,
                lock: def.lock,
            };
            for range in [&spec.key_size, &spec.value_size, &spec.max_entries] {
                if range.values().is_empty() {
                    return Err(CatalogError::Invalid { name: def.id.name().into(), reason: "unsatisfiable attribute range" });
                }
            }
            map_types.push(spec);
        }
        map_types.sort_by_key(|m| m.id);

        let mut helpers = file.helpers;
        helpers.sort_by_key(|h| h.id);
        for pair in helpers.windows(2) {
            if pair[0].id == pair[1].id || pair[0].name == pair[1].name {
                return Err(CatalogError::Duplicate { kind: "helper", name: pair[1].name.clone() });
            }
        }
        for h in &helpers {
            let invalid = |reason| CatalogError::Invalid { name: h.name.clone(), reason };
            if h.args.len() > 5 {
                return Err(invalid("more than five arguments"));
            }
            if h.acquires.is_some() && h.releases.is_some() {
                return Err(invalid("helper both acquires and releases a reference"));
            }
            let map_args = h.args.iter().filter(|a| **a == ArgType::ConstMapPtr).count();
            if map_args > 1 {
                return Err(invalid("more than one map argument"));
            }
            if (map_args == 1) == h.maps.is_empty() {
                return Err(invalid("map list must be present exactly when a map argument is"));
            }
            for m in &h.maps {
                if !map_types.iter().any(|s| s.id == *m) {
                    return Err(unknown("map type", m.name()));
                }
            }
            if h.args.contains(&ArgType::PtrToRef) != h.releases.is_some() {
                return Err(invalid("releasing helpers take exactly the reference argument"));
            }
        }

        let group_index: BTreeMap<&str, &HelperGroupDef> =
            file.helper_groups.iter().map(|g| (g.name.as_str(), g)).collect();
        if group_index.len() != file.helper_groups.len() {
            return Err(CatalogError::Duplicate { kind: "helper group", name: String::new() });
        }

        let mut program_types = Vec::new();
        for def in &file.program_types {
            if program_types.iter().any(|p: &ProgramTypeSpec| p.id == def.id) {
                return Err(CatalogError::Duplicate { kind: "program type", name: def.id.name().into() });
            }
            let mut names = BTreeSet::new();
            for g in &def.helper_groups {
                flatten_group(g, &group_index, &mut Vec::new(), &mut names)?;
            }
            let mut available = Vec::new();
            for n in &names {
                let h = helpers.iter().find(|h| h.name == *n).ok_or_else(|| unknown("helper", n))?;
                available.push(h.id);
            }
            available.sort_unstable();
            if available.is_empty() {
                return Err(CatalogError::Invalid { name: def.id.name().into(), reason: "no helpers available" });
            }
            let mut forbidden = 0;
            for f in &def.forbidden_map_flags {
                forbidden |= flag_bit(f)?;
            }
            let mut compatible = def.compatible_maps.clone();
            compatible.sort_unstable();
            compatible.dedup();
            for m in &compatible {
                if !map_types.iter().any(|s| s.id == *m) {
                    return Err(unknown("map type", m.name()));
                }
            }
            validate_context(def.id, &def.context)?;
            program_types.push(ProgramTypeSpec {
                id: def.id,
                section_name: def.section.clone(),
                attach_kind: def.attach,
                test_run: def.test_run,
                event_context: def.event_context,
                context: def.context.clone(),
                available_helpers: available,
                compatible_maps: compatible,
                forbidden_map_flags: forbidden,
            });
        }
        for pt in ProgramTypeId::ALL {
            if !program_types.iter().any(|p| p.id == *pt) {
                return Err(CatalogError::Missing(alloc::format!("program type {pt}")));
            }
        }
        program_types.sort_by_key(|p| p.id.index());

        Ok(Catalog { version: file.version, flag_names, arg_compat, helpers, map_types, program_types })
    }

    pub fn program_type(&self, pt: ProgramTypeId) -> &ProgramTypeSpec {
        &self.program_types[pt.index()]
    }

    pub fn program_types(&self) -> &[ProgramTypeSpec] {
        &self.program_types
    }

    pub fn helpers(&self) -> &[HelperProto] {
        &self.helpers
    }

    pub fn helper(&self, id: HelperId) -> Option<&HelperProto> {
        self.helpers.binary_search_by_key(&id, |h| h.id).ok().map(|i| &self.helpers[i])
    }

    pub fn helper_by_name(&self, name: &str) -> Option<&HelperProto> {
        let name = name.strip_prefix("bpf_").unwrap_or(name);
        self.helpers.iter().find(|h| h.name == name)
    }

    pub fn helper_name(&self, id: u32) -> Option<String> {
        self.helper(HelperId(id)).map(|h| h.name.clone())
    }

    /// Flattened helper availability for a program type.
    pub fn helpers_for(&self, pt: ProgramTypeId) -> &[HelperId] {
        &self.program_type(pt).available_helpers
    }

    pub fn is_available(&self, pt: ProgramTypeId, h: HelperId) -> bool {
        self.helpers_for(pt).binary_search(&h).is_ok()
    }

    pub fn compatible_value_types(&self, arg: ArgType) -> &[ValueType] {
        &self.arg_compat[arg.index()]
    }

    /// Map types usable as the map argument of `h` in a program of type `pt`.
    pub fn maps_for(&self, pt: ProgramTypeId, h: HelperId) -> Result<Vec<MapTypeId>, CatalogError> {
        let proto = self.helper(h).ok_or_else(|| unknown("helper", &h.to_string()))?;
        if proto.map_arg().is_none() {
            return Err(CatalogError::NoMapArgument(h));
        }
        let pts = self.program_type(pt);
        Ok(proto.maps.iter().copied().filter(|m| pts.compatible_maps.contains(m)).collect())
    }

    pub fn map_types(&self) -> &[MapTypeSpec] {
        &self.map_types
    }

    pub fn map_attr_constraints(&self, mt: MapTypeId) -> Option<&MapTypeSpec> {
        self.map_types.iter().find(|m| m.id == mt)
    }

    pub fn flag_bit(&self, name: &str) -> Option<u32> {
        self.flag_names.iter().find(|(n, _)| n == name).map(|(_, b)| *b)
    }

    pub fn flag_names(&self) -> &[(String, u32)] {
        &self.flag_names
    }

    /// Context fields readable (or, with `write`, writable) by `pt` programs.
    pub fn context_fields(&self, pt: ProgramTypeId, write: bool) -> Vec<&ContextField> {
        self.program_type(pt)
            .context
            .fields
            .iter()
            .filter(|f| if write { f.write } else { f.read })
            .collect()
    }

    /// Checks a map creation request against the constraint table.
    pub fn validate_map_spec(&self, req: &MapSpecRequest) -> Result<(), AttrInvalid> {
        let spec = self.map_attr_constraints(req.map_type).ok_or(AttrInvalid::MapType)?;
        if !spec.key_size.contains(req.key_size) {
            return Err(AttrInvalid::KeySize(req.key_size));
        }
        if !spec.value_size.contains(req.value_size) {
            return Err(AttrInvalid::ValueSize(req.value_size));
        }
        if !spec.max_entries.contains(req.max_entries) {
            return Err(AttrInvalid::MaxEntries(req.max_entries));
        }
        if req.flags & !spec.allowed_flags() != 0 {
            return Err(AttrInvalid::Flags(req.flags));
        }
        for group in &spec.flag_groups {
            if group.iter().filter(|f| req.flags & **f != 0).count() > 1 {
                return Err(AttrInvalid::Flags(req.flags));
            }
        }
        Ok(())
    }
}

fn flatten_group(
    name: &str,
    groups: &BTreeMap<&str, &HelperGroupDef>,
    stack: &mut Vec<String>,
    out: &mut BTreeSet<String>,
) -> Result<(), CatalogError> {
    if stack.iter().any(|s| s == name) {
        return Err(CatalogError::IncludeCycle(name.to_string()));
    }
    let group = groups.get(name).ok_or_else(|| unknown("helper group", name))?;
    stack.push(name.to_string());
    out.extend(group.helpers.iter().cloned());
    for inc in &group.include {
        flatten_group(inc, groups, stack, out)?;
    }
    stack.pop();
    Ok(())
}

fn validate_context(pt: ProgramTypeId, ctx: &ContextDescriptor) -> Result<(), CatalogError> {
    let invalid = |reason| CatalogError::Invalid { name: pt.name().into(), reason };
    let mut spans: Vec<(u32, u32)> = Vec::new();
    for f in &ctx.fields {
        if !matches!(f.width, 1 | 2 | 4 | 8) || f.offset % f.width != 0 {
            return Err(invalid("context field width or alignment"));
        }
        if f.offset + f.width > ctx.size {
            return Err(invalid("context field outside context"));
        }
        if spans.iter().any(|(o, w)| f.offset < o + w && *o < f.offset + f.width) {
            return Err(invalid("overlapping context fields"));
        }
        if f.write && f.yields != ValueType::Scalar {
            return Err(invalid("only scalar context fields may be writable"));
        }
        spans.push((f.offset, f.width));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_loads_and_meets_size_floors() {
        let c = Catalog::builtin();
        assert!(c.helpers().len() >= 15);
        assert_eq!(c.program_types().len(), 6);
        assert!(c.map_types().len() >= 9);
    }

    #[test]
    fn include_cycle_is_rejected() {
        let text = DEFAULT_CATALOG_TOML.replace(
            "name = \"base\"\nhelpers",
            "name = \"base\"\ninclude = [\"packet\"]\nhelpers",
        );
        let text = text.replacen("include = []\n", "", 1);
        assert!(matches!(Catalog::from_toml(&text), Err(CatalogError::IncludeCycle(_))));
    }

    #[test]
    fn attr_range_values() {
        let r = AttrRange { set: Vec::new(), min: 4096, max: 65536, multiple_of: 4096, power_of_two: true };
        assert_eq!(r.values(), [4096, 8192, 16384, 32768, 65536]);
        assert!(!r.contains(12288));
    }
}
