/* Minimal consumer of the C ABI. Build from the workspace root with:
 *
 *   cargo build -p lexgen-ffi
 *   cc crates/lexgen-ffi/examples/smoke.c \
 *      -Icrates/lexgen-ffi/include -Ltarget/debug -llexgen_ffi -o smoke
 *   LD_LIBRARY_PATH=target/debug ./smoke
 *
 * tests/c_smoke.rs runs the same steps when a C compiler is available.
 */
#include "lexgen.h"
#include <stdio.h>
#include <string.h>

int main(void) {
    double score = -1.0;
    const char *refs[] = {"abcd"};
    LexgenStatus st = lexgen_chrf("abcd", refs, 1, &score);
    if (st != LEXGEN_STATUS_OK || score != 100.0) {
        fprintf(stderr, "chrf failed: status %d score %f\n", (int)st, score);
        return 1;
    }

    st = lexgen_chrf("abcd", NULL, 1, &score);
    if (st != LEXGEN_STATUS_USAGE) return 2;
    if (strlen(lexgen_last_error_message()) == 0) return 3;

    LexgenModel *model = NULL;
    st = lexgen_model_load("/nonexistent.ckpt", &model);
    if (st != LEXGEN_STATUS_DATA || model != NULL) return 4;
    lexgen_model_free(model);

    printf("C smoke OK, version %s\n", lexgen_version());
    return 0;
}
