from hypothesis import strategies as st

from tokunaga.tree import Tree

# plane codes (children in arbitrary order) of binary trees
plane_codes = st.recursive(
    st.just("L"),
    lambda sub: st.tuples(sub, sub).map(lambda ab: f"({ab[0]},{ab[1]})"),
    max_leaves=40,
)

trees = plane_codes.map(Tree.from_code)
