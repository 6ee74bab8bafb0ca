use alloc::vec;

use super::*;
use crate::catalog::helper_ids;

fn v(n: u32) -> VarId {
    VarId(n)
}

#[test]
fn guard_splits_reference_checks_outward() {
    let mut env = TypeEnv::new();
    env.insert(v(0), VarKind::Mem { size: 8, acquired: true });
    env.insert(v(1), VarKind::Scalar);
    let body = vec![Stmt::Literal { var: v(2), value: 1 }];
    let out = guard(vec![Pred::SizeBound(v(1), 8), Pred::NonNull(v(0))], body.clone(), &env);
    let inner = Stmt::Guarded { preds: vec![Pred::SizeBound(v(1), 8)], body };
    assert_eq!(out, vec![Stmt::Guarded { preds: vec![Pred::NonNull(v(0))], body: vec![inner] }]);
}

#[test]
fn unreleased_reference_gets_release_after_last_use() {
    let cat = Catalog::builtin();
    let mut ast = ProgramAst::empty(ProgramTypeId::Kprobe);
    ast.map_deps.push(MapSpecRequest {
        map_type: crate::MapTypeId::Ringbuf,
        key_size: 0,
        value_size: 0,
        max_entries: 4096,
        flags: 0,
    });
    ast.stmts = vec![
        Stmt::Call { var: Some(v(0)), helper: helper_ids::RINGBUF_RESERVE, args: vec![Expr::Map(0), Expr::Imm(8), Expr::Imm(0)] },
        Stmt::Guarded {
            preds: vec![Pred::NonNull(v(0))],
            body: vec![Stmt::Store { ptr: v(0), offset: 0, width: 8, value: Expr::Imm(1) }],
        },
    ];
    fixup_references(&mut ast, &cat);
    let Stmt::Guarded { body, .. } = &ast.stmts[1] else { panic!("guard moved") };
    assert_eq!(body.len(), 2);
    assert!(matches!(&body[1], Stmt::Call { helper, .. } if cat.helper(*helper).unwrap().releases.is_some()));
}

#[test]
fn pruning_renumbers_maps() {
    let mut ast = ProgramAst::empty(ProgramTypeId::Kprobe);
    let m = MapSpecRequest { map_type: crate::MapTypeId::Array, key_size: 4, value_size: 8, max_entries: 1, flags: 0 };
    ast.map_deps = vec![m, MapSpecRequest { max_entries: 2, ..m }];
    ast.stmts = vec![Stmt::Call { var: None, helper: helper_ids::MAP_LOOKUP_ELEM, args: vec![Expr::Map(1), Expr::Imm(0)] }];
    prune_map_deps(&mut ast);
    assert_eq!(ast.map_deps.len(), 1);
    assert_eq!(ast.map_deps[0].max_entries, 2);
    assert!(matches!(&ast.stmts[0], Stmt::Call { args, .. } if args[0] == Expr::Map(0)));
}

#[test]
fn parse_errors_name_the_line() {
    let cat = Catalog::builtin();
    let e = deserialize("prog kprobe\nv0 = 1\nv1 = call no_such_helper()\nreturn 0\n", &cat).unwrap_err();
    assert_eq!(e.line, 3);
    let e = deserialize("prog kprobe\nif v0 != null {\nreturn 0\n", &cat).unwrap_err();
    assert_eq!(e.line, 3);
}
