from lifemap.store.models import SessionRecord, SessionRef, StoreManifest, StoreSettings, StoreStats
from lifemap.store.store import (
    EPS_RM,
    VersionStore,
    commit,
    commit_clean,
    diff_between,
    efficiency_ratio,
    forward_update,
    init_store,
    point_subtract,
    prepare_clean,
    recover,
    reconstruct,
    rollback,
    stats,
)
