/* SPDX-License-Identifier: Apache-2.0 */
/* cc route.c -I../include -L../../../target/debug -l:libbpa_dispatch_ffi.a -lpthread -ldl -lm -o route */
#include <stdio.h>
#include "bpa_dispatch.h"

int main(void) {
    char *route = NULL;
    BpaStatus st = bpa_earliest_arrival("A B 10 20\nB C 15 30\n", "A", "C", 5, &route);
    if (st != BPA_STATUS_OK) {
        fprintf(stderr, "error %d: %s\n", (int)st, bpa_last_error_message());
        return 1;
    }
    printf("%s\n", route);
    bpa_string_free(route);
    return 0;
}
